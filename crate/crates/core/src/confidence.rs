//! Pseudo-labels, fixed and self-adaptive confidence thresholds, the
//! high/low-confidence partition and the pairing rules for mixing.
//!
//! The adaptive threshold tracks a global confidence level and a per-class
//! expectation vector with an EMA of decay `m`:
//!
//! ```text
//! τ_g   ← m·τ_g + (1 − m)·mean_b max(q_b)
//! p̃     ← m·p̃   + (1 − m)·mean_b q_b
//! τ_c(c) = p̃_c / max_c' p̃_c' · τ_g
//! ```
//!
//! starting from τ_g = 1/C and p̃ = (1/C, …, 1/C).

use rand::Rng;

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionBatch {
    pub num_classes: usize,
    /// Row-major [n, num_classes].
    pub probs: Vec<f32>,
    pub argmax: Vec<usize>,
    pub max_conf: Vec<f32>,
}

impl PredictionBatch {
    pub fn from_rows(num_classes: usize, probs: Vec<f32>) -> Result<Self> {
        if num_classes == 0 || probs.len() % num_classes != 0 {
            return Err(Error::Shape(format!(
                "{} probabilities for {} classes",
                probs.len(),
                num_classes
            )));
        }
        let mut argmax = Vec::with_capacity(probs.len() / num_classes);
        let mut max_conf = Vec::with_capacity(probs.len() / num_classes);
        for row in probs.chunks_exact(num_classes) {
            // ties resolve to the lowest class index
            let (k, &m) = row
                .iter()
                .enumerate()
                .fold((0, &row[0]), |best, cur| if cur.1 > best.1 { cur } else { best });
            argmax.push(k);
            max_conf.push(m);
        }
        Ok(Self {
            num_classes,
            probs,
            argmax,
            max_conf,
        })
    }

    pub fn from_tensor(probs: &Tensor) -> Result<Self> {
        match probs.shape() {
            [_, c] => Self::from_rows(*c, probs.data().to_vec()),
            s => Err(Error::Shape(format!("expected [n, c] probabilities, got {s:?}"))),
        }
    }

    pub fn len(&self) -> usize {
        self.argmax.len()
    }

    pub fn is_empty(&self) -> bool {
        self.argmax.is_empty()
    }

    pub fn row(&self, b: usize) -> &[f32] {
        &self.probs[b * self.num_classes..(b + 1) * self.num_classes]
    }

    /// Rows restricted to `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut probs = Vec::with_capacity(indices.len() * self.num_classes);
        for &i in indices {
            probs.extend_from_slice(self.row(i));
        }
        Self {
            num_classes: self.num_classes,
            probs,
            argmax: indices.iter().map(|&i| self.argmax[i]).collect(),
            max_conf: indices.iter().map(|&i| self.max_conf[i]).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ThresholdMode {
    Fixed,
    Adaptive,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdState {
    pub mode: ThresholdMode,
    pub tau_fixed: f64,
    pub tau_global: f64,
    pub class_expectation: Vec<f64>,
    pub decay: f64,
    pub num_classes: usize,
}

impl ThresholdState {
    pub fn new(mode: ThresholdMode, num_classes: usize, tau_fixed: f64, decay: f64) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::InvalidArgument("no classes".into()));
        }
        if !(0.0..1.0).contains(&decay) {
            return Err(Error::InvalidArgument(format!("threshold decay {decay} outside [0, 1)")));
        }
        let uniform = 1.0 / num_classes as f64;
        Ok(Self {
            mode,
            tau_fixed,
            tau_global: uniform,
            class_expectation: vec![uniform; num_classes],
            decay,
            num_classes,
        })
    }

    pub fn update_adaptive_threshold(&mut self, preds: &PredictionBatch) -> Result<()> {
        if self.mode != ThresholdMode::Adaptive {
            return Err(Error::InvalidArgument("threshold update requires adaptive mode".into()));
        }
        if preds.is_empty() {
            return Err(Error::InvalidArgument("empty prediction batch".into()));
        }
        if preds.num_classes != self.num_classes {
            return Err(Error::Shape(format!(
                "{} classes predicted, threshold tracks {}",
                preds.num_classes, self.num_classes
            )));
        }
        let n = preds.len() as f64;
        let m = self.decay;
        let mean_max = preds.max_conf.iter().map(|&v| v as f64).sum::<f64>() / n;
        self.tau_global = m * self.tau_global + (1.0 - m) * mean_max;
        let mut mean_q = vec![0.0f64; self.num_classes];
        for row in preds.probs.chunks_exact(self.num_classes) {
            for (acc, &v) in mean_q.iter_mut().zip(row) {
                *acc += v as f64;
            }
        }
        for (p, q) in self.class_expectation.iter_mut().zip(&mean_q) {
            *p = m * *p + (1.0 - m) * q / n;
        }
        Ok(())
    }

    /// Threshold for the clean-sample consistency mask of a sample whose
    /// pseudo-label is `class`.
    pub fn effective_tau_c(&self, class: usize) -> f64 {
        match self.mode {
            ThresholdMode::Fixed => self.tau_fixed,
            ThresholdMode::Adaptive => {
                let peak = self.class_expectation.iter().copied().fold(0.0f64, f64::max);
                if peak <= 0.0 {
                    self.tau_global
                } else {
                    self.class_expectation[class] / peak * self.tau_global
                }
            }
        }
    }

    /// Value logged as the global threshold.
    pub fn reported_global(&self) -> f64 {
        match self.mode {
            ThresholdMode::Fixed => self.tau_fixed,
            ThresholdMode::Adaptive => self.tau_global,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Partition {
    /// max(q) > τ_m, ascending batch indices.
    pub high: Vec<usize>,
    /// The rest of the batch (or, in exclusive mode, the rest minus the mask).
    pub low: Vec<usize>,
    /// max(q) ≥ τ_c(argmax q).
    pub consistency_mask: Vec<usize>,
}

/// `exclusive_low` drops consistency-masked samples from the low set.
pub fn partition(preds: &PredictionBatch, state: &ThresholdState, tau_m: f64, exclusive_low: bool) -> Partition {
    let mut p = Partition::default();
    for b in 0..preds.len() {
        let conf = preds.max_conf[b] as f64;
        let masked = conf >= state.effective_tau_c(preds.argmax[b]);
        if masked {
            p.consistency_mask.push(b);
        }
        if conf > tau_m {
            p.high.push(b);
        } else if !(exclusive_low && masked) {
            p.low.push(b);
        }
    }
    p
}

/// One partner per high-confidence sample, drawn uniformly from the high set
/// with replacement (self-pairs allowed).
pub fn pair_srm(high: &[usize], rng: &mut impl Rng) -> Vec<(usize, usize)> {
    if high.is_empty() {
        return Vec::new();
    }
    high.iter()
        .map(|&i| (i, high[rng.random_range(0..high.len())]))
        .collect()
}

/// For each low-confidence sample, a uniform partner among high-confidence
/// samples whose pseudo-label equals its argmax; samples without such a
/// partner are skipped.
pub fn pair_cam(low: &[usize], high: &[usize], preds: &PredictionBatch, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for &i in low {
        let class = preds.argmax[i];
        let candidates: Vec<usize> = high.iter().copied().filter(|&j| preds.argmax[j] == class).collect();
        if !candidates.is_empty() {
            pairs.push((i, candidates[rng.random_range(0..candidates.len())]));
        }
    }
    pairs
}

/// Class-agnostic variant: partner drawn uniformly from the whole high set.
pub fn pair_random(low: &[usize], high: &[usize], rng: &mut impl Rng) -> Vec<(usize, usize)> {
    if high.is_empty() {
        return Vec::new();
    }
    low.iter()
        .map(|&i| (i, high[rng.random_range(0..high.len())]))
        .collect()
}
