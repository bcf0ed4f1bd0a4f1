use super::params::{ParamKind, ParameterSet};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Heavy-ball SGD with weight decay folded into the gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    /// One velocity per trainable parameter, same names and shapes.
    pub velocity: ParameterSet,
}

impl OptimizerState {
    pub fn new(params: &ParameterSet, lr: f32, momentum: f32, weight_decay: f32) -> Self {
        let mut velocity = ParameterSet::new();
        for e in params.entries().iter().filter(|e| e.kind == ParamKind::Trainable) {
            velocity
                .insert(&e.name, ParamKind::Trainable, Tensor::zeros(e.tensor.shape()))
                .expect("names unique in source set");
        }
        Self {
            lr,
            momentum,
            weight_decay,
            velocity,
        }
    }
}

/// v ← momentum·v + g + weight_decay·θ;  θ ← θ − lr·v.
/// Buffers are left alone; every trainable parameter needs a gradient.
pub fn sgd_step(params: &mut ParameterSet, grads: &ParameterSet, opt: &mut OptimizerState) -> Result<()> {
    let (lr, mom, wd) = (opt.lr, opt.momentum, opt.weight_decay);
    for entry in params.entries_mut() {
        if entry.kind != ParamKind::Trainable {
            continue;
        }
        let g = grads
            .get(&entry.name)
            .ok_or_else(|| Error::Shape(format!("no gradient for {}", entry.name)))?;
        let v = opt
            .velocity
            .get_mut(&entry.name)
            .ok_or_else(|| Error::Shape(format!("no velocity for {}", entry.name)))?;
        if g.shape() != entry.tensor.shape() || v.shape() != entry.tensor.shape() {
            return Err(Error::Shape(format!(
                "{}: param {:?} grad {:?} velocity {:?}",
                entry.name,
                entry.tensor.shape(),
                g.shape(),
                v.shape()
            )));
        }
        let theta = entry.tensor.data_mut();
        for ((t, vel), gv) in theta.iter_mut().zip(v.data_mut()).zip(g.data()) {
            *vel = mom * *vel + gv + wd * *t;
            *t -= lr * *vel;
        }
    }
    Ok(())
}

/// Exponential moving average of every tensor (buffers included).
#[derive(Clone, Debug, PartialEq)]
pub struct EmaState {
    pub decay: f32,
    pub shadow: ParameterSet,
}

impl EmaState {
    pub fn new(params: &ParameterSet, decay: f32) -> Self {
        Self {
            decay,
            shadow: params.clone(),
        }
    }
}

/// shadow ← d·shadow + (1−d)·params
pub fn ema_update(ema: &mut EmaState, params: &ParameterSet) -> Result<()> {
    ema.shadow.check_aligned(params)?;
    let d = ema.decay;
    for (s, p) in ema.shadow.entries_mut().iter_mut().zip(params.entries()) {
        for (a, b) in s.tensor.data_mut().iter_mut().zip(p.tensor.data()) {
            *a = d * *a + (1.0 - d) * b;
        }
    }
    Ok(())
}
