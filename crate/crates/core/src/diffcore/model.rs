//! The small convolutional classifier: three stages of two
//! conv3×3 → batch-norm → ReLU blocks (stride 2 at the start of stages two
//! and three), global average pooling and a linear head.

use rand::Rng;

use super::kernels;
use super::params::{ParamKind, ParameterSet};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng;

pub const BN_MOMENTUM: f32 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running statistics refreshed, tape kept for backward.
    Train,
    /// Running statistics.
    Eval,
    /// Batch statistics without touching the running statistics.
    BatchStats,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SmallConvNet {
    pub in_channels: usize,
    pub num_classes: usize,
    pub widths: [usize; 3],
}

pub struct Forward {
    pub tape: Tape,
    pub logits: Var,
    /// Softmax of the logits, [n, classes].
    pub probs: Tensor,
    /// Refreshed running statistics (train mode only).
    pub running: Vec<(String, Tensor)>,
}

impl Forward {
    pub fn commit_running(&mut self, params: &mut ParameterSet) -> Result<()> {
        for (name, t) in self.running.drain(..) {
            let slot = params
                .get_mut(&name)
                .ok_or_else(|| Error::InvalidArgument(format!("missing buffer {name}")))?;
            *slot = t;
        }
        Ok(())
    }
}

fn conv_name(stage: usize, block: usize) -> String {
    format!("stage{stage}.conv{block}")
}

fn bn_name(stage: usize, block: usize) -> String {
    format!("stage{stage}.bn{block}")
}

impl SmallConvNet {
    pub const DEFAULT_WIDTHS: [usize; 3] = [32, 64, 128];

    pub fn new(in_channels: usize, num_classes: usize) -> Self {
        Self::with_widths(in_channels, num_classes, Self::DEFAULT_WIDTHS)
    }

    pub fn with_widths(in_channels: usize, num_classes: usize, widths: [usize; 3]) -> Self {
        Self {
            in_channels,
            num_classes,
            widths,
        }
    }

    fn blocks(&self) -> Vec<(usize, usize, usize, usize, usize)> {
        // (stage, block, c_in, c_out, stride)
        let mut out = Vec::new();
        let mut c_in = self.in_channels;
        for (s, &w) in self.widths.iter().enumerate() {
            for b in 0..2 {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                out.push((s + 1, b + 1, c_in, w, stride));
                c_in = w;
            }
        }
        out
    }

    /// He-uniform weights, unit norm scales, zero shifts and biases.
    pub fn init(&self, seed: u64) -> ParameterSet {
        let mut rng = rng::stream(seed, "init", 0, 0);
        let mut he = |shape: &[usize], fan_in: usize| {
            let bound = (6.0 / fan_in as f64).sqrt() as f32;
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
            Tensor::new(shape.to_vec(), data).expect("shape matches data")
        };
        let mut p = ParameterSet::new();
        let mut add = |name: String, kind, t| p.insert(&name, kind, t).expect("unique layer names");
        for (s, b, c_in, c_out, _) in self.blocks() {
            let conv = conv_name(s, b);
            let bn = bn_name(s, b);
            add(format!("{conv}.weight"), ParamKind::Trainable, he(&[c_out, c_in, 3, 3], c_in * 9));
            add(format!("{bn}.weight"), ParamKind::Trainable, Tensor::full(&[c_out], 1.0));
            add(format!("{bn}.bias"), ParamKind::Trainable, Tensor::zeros(&[c_out]));
            add(format!("{bn}.running_mean"), ParamKind::Buffer, Tensor::zeros(&[c_out]));
            add(format!("{bn}.running_var"), ParamKind::Buffer, Tensor::full(&[c_out], 1.0));
        }
        let last = self.widths[2];
        add("head.weight".into(), ParamKind::Trainable, he(&[self.num_classes, last], last));
        add("head.bias".into(), ParamKind::Trainable, Tensor::zeros(&[self.num_classes]));
        p
    }

    /// Batch: [n, in_channels, h, w] (already standardized).
    pub fn forward(&self, params: &ParameterSet, batch: &Tensor, mode: Mode) -> Result<Forward> {
        let s = batch.shape();
        if s.len() != 4 || s[1] != self.in_channels || s[0] == 0 {
            return Err(Error::Shape(format!(
                "expected [n, {}, h, w] input, got {:?}",
                self.in_channels, s
            )));
        }
        let mut tape = Tape::new();
        let mut running = Vec::new();
        let mut h = tape.constant(batch.clone());
        for (st, b, _, _, stride) in self.blocks() {
            let conv = conv_name(st, b);
            let bn = bn_name(st, b);
            let w = tape.param(&format!("{conv}.weight"), params.require(&format!("{conv}.weight"))?.clone());
            h = tape.conv2d(h, w, stride, 1)?;
            let gamma = tape.param(&format!("{bn}.weight"), params.require(&format!("{bn}.weight"))?.clone());
            let beta = tape.param(&format!("{bn}.bias"), params.require(&format!("{bn}.bias"))?.clone());
            let rm_name = format!("{bn}.running_mean");
            let rv_name = format!("{bn}.running_var");
            let rm = params.require(&rm_name)?;
            let rv = params.require(&rv_name)?;
            h = match mode {
                Mode::Eval => tape.batchnorm(h, gamma, beta, Some((rm.data(), rv.data())))?.0,
                Mode::BatchStats => tape.batchnorm(h, gamma, beta, None)?.0,
                Mode::Train => {
                    let shape = tape.value(h).shape().to_vec();
                    let count = (shape[0] * shape[2] * shape[3]) as f32;
                    let (out, stats) = tape.batchnorm(h, gamma, beta, None)?;
                    let (mean, var) = stats.expect("batch statistics requested");
                    let unbias = count / (count - 1.0);
                    let new_rm = rm
                        .data()
                        .iter()
                        .zip(&mean)
                        .map(|(r, m)| (1.0 - BN_MOMENTUM) * r + BN_MOMENTUM * m)
                        .collect();
                    let new_rv = rv
                        .data()
                        .iter()
                        .zip(&var)
                        .map(|(r, v)| (1.0 - BN_MOMENTUM) * r + BN_MOMENTUM * v * unbias)
                        .collect();
                    running.push((rm_name, Tensor::new(rm.shape().to_vec(), new_rm)?));
                    running.push((rv_name, Tensor::new(rv.shape().to_vec(), new_rv)?));
                    out
                }
            };
            h = tape.relu(h)?;
        }
        let pooled = tape.global_avg_pool(h)?;
        let hw = tape.param("head.weight", params.require("head.weight")?.clone());
        let hb = tape.param("head.bias", params.require("head.bias")?.clone());
        let logits = tape.linear(pooled, hw, hb)?;
        let z = tape.value(logits);
        z.ensure_finite("logits")?;
        let probs = Tensor::new(z.shape().to_vec(), kernels::softmax_rows(z.data(), self.num_classes))?;
        Ok(Forward {
            tape,
            logits,
            probs,
            running,
        })
    }
}
