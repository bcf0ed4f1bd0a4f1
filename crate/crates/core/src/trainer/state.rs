//! Mutable run state and its checkpoint encoding.

use std::path::Path;

use crate::confidence::ThresholdState;
use crate::diffcore::checkpoint::{decode_f64s, decode_u64, encode_f64s, encode_u64};
use crate::diffcore::{Checkpoint, EmaState, OptimizerState, ParameterSet};
use crate::error::{Error, Result};

const EMA_SUFFIX: &str = ".ema";
const VEL_SUFFIX: &str = ".vel";
const KEY_ITERATION: &str = "run.iteration";
const KEY_SEED: &str = "run.seed";
const KEY_WALL: &str = "run.wall_clock_s";
const KEY_TAU: &str = "threshold.tau_global";
const KEY_EXPECT: &str = "threshold.class_expectation";

#[derive(Clone, Debug, PartialEq)]
pub struct RunState {
    /// Completed steps.
    pub iteration: u64,
    pub params: ParameterSet,
    pub opt: OptimizerState,
    pub ema: EmaState,
    pub threshold: ThresholdState,
    pub seed: u64,
    pub wall_clock_s: f64,
}

impl RunState {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        for e in self.params.entries() {
            ck.push(e.name.clone(), e.tensor.clone());
        }
        for e in self.ema.shadow.entries() {
            ck.push(format!("{}{EMA_SUFFIX}", e.name), e.tensor.clone());
        }
        for e in self.opt.velocity.entries() {
            ck.push(format!("{}{VEL_SUFFIX}", e.name), e.tensor.clone());
        }
        ck.push(KEY_ITERATION, encode_u64(self.iteration));
        ck.push(KEY_SEED, encode_u64(self.seed));
        ck.push(KEY_WALL, encode_f64s(&[self.wall_clock_s]));
        ck.push(KEY_TAU, encode_f64s(&[self.threshold.tau_global]));
        ck.push(KEY_EXPECT, encode_f64s(&self.threshold.class_expectation));
        ck
    }

    /// Overwrites the tensors and counters of `template` (a freshly
    /// initialised state of the same run) with the checkpoint's.
    pub fn from_checkpoint(ck: &Checkpoint, template: &RunState) -> Result<RunState> {
        let mut s = template.clone();
        let fill = |set: &mut ParameterSet, suffix: &str| -> Result<()> {
            for e in set.entries_mut() {
                let t = ck.require(&format!("{}{suffix}", e.name))?;
                if t.shape() != e.tensor.shape() {
                    return Err(Error::Format(format!(
                        "{}{suffix}: checkpoint shape {:?}, model {:?}",
                        e.name,
                        t.shape(),
                        e.tensor.shape()
                    )));
                }
                e.tensor = t.clone();
            }
            Ok(())
        };
        fill(&mut s.params, "")?;
        fill(&mut s.ema.shadow, EMA_SUFFIX)?;
        fill(&mut s.opt.velocity, VEL_SUFFIX)?;
        s.iteration = decode_u64(ck.require(KEY_ITERATION)?)?;
        s.seed = decode_u64(ck.require(KEY_SEED)?)?;
        s.wall_clock_s = single(decode_f64s(ck.require(KEY_WALL)?)?)?;
        s.threshold.tau_global = single(decode_f64s(ck.require(KEY_TAU)?)?)?;
        let expect = decode_f64s(ck.require(KEY_EXPECT)?)?;
        if expect.len() != s.threshold.num_classes {
            return Err(Error::Format(format!(
                "{} class expectations for {} classes",
                expect.len(),
                s.threshold.num_classes
            )));
        }
        s.threshold.class_expectation = expect;
        let known = s.params.len() + s.ema.shadow.len() + s.opt.velocity.len() + 5;
        if ck.tensors.len() != known {
            return Err(Error::Format(format!(
                "checkpoint holds {} tensors, run expects {known}",
                ck.tensors.len()
            )));
        }
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().write(path)
    }

    pub fn load(path: &Path, template: &RunState) -> Result<RunState> {
        Self::from_checkpoint(&Checkpoint::read(path)?, template)
    }
}

fn single(v: Vec<f64>) -> Result<f64> {
    match v.as_slice() {
        [x] => Ok(*x),
        _ => Err(Error::Format(format!("expected one value, got {}", v.len()))),
    }
}
