//! Loss terms: supervised cross-entropy `l_s`, thresholded consistency
//! `l_u`, cross-entropy on mixed high-confidence pairs `l_m` and squared
//! error on class-aware low-confidence mixes `l_cm`.
//!
//! Each term exists twice: a value-level function over probability rows and
//! a tape builder ([`LossPlan`]) over one concatenated forward batch. The two
//! agree up to f32 rounding.

use std::fmt;
use std::str::FromStr;

use crate::augment::{mix_pair, MixOutcome, MixStrategy};
use crate::confidence::{pair_cam, pair_random, pair_srm, PredictionBatch};
use crate::data::Image;
use crate::diffcore::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng;

/// Lower clamp on probabilities inside a logarithm.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Ablation {
    #[default]
    None,
    NoMixed,
    NoClean,
    NoCam,
    CamToMixup,
    SupervisedOnly,
}

impl Ablation {
    pub const ALL: [Ablation; 6] = [
        Ablation::None,
        Ablation::NoMixed,
        Ablation::NoClean,
        Ablation::NoCam,
        Ablation::CamToMixup,
        Ablation::SupervisedOnly,
    ];

    pub fn uses_clean(self) -> bool {
        !matches!(self, Ablation::NoClean | Ablation::SupervisedOnly)
    }

    pub fn uses_mixed(self) -> bool {
        !matches!(self, Ablation::NoMixed | Ablation::SupervisedOnly)
    }

    pub fn uses_cam(self) -> bool {
        !matches!(self, Ablation::NoCam | Ablation::SupervisedOnly)
    }

    pub fn uses_unlabeled(self) -> bool {
        self != Ablation::SupervisedOnly
    }

    pub fn random_cam_pairing(self) -> bool {
        self == Ablation::CamToMixup
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::NoMixed => "no_mixed",
            Ablation::NoClean => "no_clean",
            Ablation::NoCam => "no_cam",
            Ablation::CamToMixup => "cam_to_mixup",
            Ablation::SupervisedOnly => "supervised_only",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation '{s}'")))
    }
}

/// Divisor of the low-confidence term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CamDivisor {
    /// `|Hc|`, unmatched members count as zero.
    #[default]
    LowCount,
    /// Number of matched pairs.
    Matched,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub l_s: f64,
    pub l_u: f64,
    pub l_m: f64,
    pub l_cm: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub l_s: f64,
    pub l_u: f64,
    pub l_m: f64,
    pub l_cm: f64,
    pub total: f64,
    pub mask_count: usize,
    pub high_count: usize,
    pub low_count: usize,
    pub cam_matched: usize,
}

impl LossReport {
    pub fn parts(&self) -> LossParts {
        LossParts { l_s: self.l_s, l_u: self.l_u, l_m: self.l_m, l_cm: self.l_cm }
    }

    pub fn is_finite(&self) -> bool {
        [self.l_s, self.l_u, self.l_m, self.l_cm, self.total].iter().all(|v| v.is_finite())
    }
}

/// Sum of the terms the ablation keeps.
pub fn total_loss(parts: &LossParts, ablation: Ablation) -> f64 {
    let mut total = parts.l_s;
    if ablation.uses_clean() {
        total += parts.l_u;
    }
    if ablation.uses_mixed() {
        total += parts.l_m;
    }
    if ablation.uses_cam() {
        total += parts.l_cm;
    }
    total
}

pub fn onehot(class: usize, num_classes: usize) -> Vec<f64> {
    let mut v = vec![0.0; num_classes];
    v[class] = 1.0;
    v
}

/// `−Σ_c t_c ln p_c` with `p` clamped at [`PROB_EPS`].
pub fn cross_entropy(target: &[f64], probs: &[f32]) -> f64 {
    target
        .iter()
        .zip(probs)
        .filter(|(t, _)| **t != 0.0)
        .map(|(t, p)| -t * (*p as f64).max(PROB_EPS).ln())
        .sum()
}

/// `‖p − t‖²`, summed over classes.
pub fn squared_error(target: &[f64], probs: &[f32]) -> f64 {
    target.iter().zip(probs).map(|(t, p)| (*p as f64 - t).powi(2)).sum()
}

pub fn supervised_loss(labels: &[usize], preds: &PredictionBatch) -> Result<f64> {
    if labels.is_empty() || labels.len() != preds.len() {
        return Err(Error::InvalidArgument(format!(
            "{} labels for {} predictions",
            labels.len(),
            preds.len()
        )));
    }
    let c = preds.num_classes;
    let sum: f64 = labels
        .iter()
        .enumerate()
        .map(|(b, &y)| cross_entropy(&onehot(y, c), preds.row(b)))
        .sum();
    Ok(sum / labels.len() as f64)
}

/// Pseudo-label cross-entropy over the masked rows, divided by the full
/// unlabeled batch size.
pub fn consistency_loss(weak: &PredictionBatch, strong: &PredictionBatch, mask: &[usize]) -> Result<f64> {
    if weak.len() != strong.len() || weak.num_classes != strong.num_classes {
        return Err(Error::InvalidArgument("weak and strong predictions are not aligned".into()));
    }
    if mask.is_empty() {
        return Ok(0.0);
    }
    let c = weak.num_classes;
    let sum: f64 = mask
        .iter()
        .map(|&b| cross_entropy(&onehot(weak.argmax[b], c), strong.row(b)))
        .sum();
    Ok(sum / weak.len() as f64)
}

/// Soft-label cross-entropy over mixed samples divided by `divisor`;
/// zero when `divisor` is zero.
pub fn mixed_cross_entropy(labels: &[Vec<f64>], preds: &PredictionBatch, divisor: usize) -> f64 {
    if divisor == 0 {
        return 0.0;
    }
    let sum: f64 = labels.iter().enumerate().map(|(k, t)| cross_entropy(t, preds.row(k))).sum();
    sum / divisor as f64
}

/// Squared error over mixed samples divided by `divisor`; zero when
/// `divisor` is zero.
pub fn mixed_squared_error(labels: &[Vec<f64>], preds: &PredictionBatch, divisor: usize) -> f64 {
    if divisor == 0 {
        return 0.0;
    }
    let sum: f64 = labels.iter().enumerate().map(|(k, t)| squared_error(t, preds.row(k))).sum();
    sum / divisor as f64
}

/// A mixed training sample built from unlabeled batch positions
/// `first ⊕ second`.
#[derive(Clone, Debug, PartialEq)]
pub struct MixedSample {
    pub first: usize,
    pub second: usize,
    pub outcome: MixOutcome,
}

/// Prediction row renormalised in f64 so that soft labels sum to one.
pub fn soft_label(preds: &PredictionBatch, b: usize) -> Vec<f64> {
    let row: Vec<f64> = preds.row(b).iter().map(|&p| p as f64).collect();
    let s: f64 = row.iter().sum();
    row.into_iter().map(|p| p / s).collect()
}

/// Pairs every high-confidence member with a random high-confidence partner
/// and mixes their strong views; labels are the two pseudo-labels.
pub fn srm_mixes(
    high: &[usize],
    views: &[Image],
    weak: &PredictionBatch,
    strategy: MixStrategy,
    alpha: f64,
    seed: u64,
    iteration: u64,
) -> Result<Vec<MixedSample>> {
    let mut pair_rng = rng::stream(seed, "pair_srm", iteration, 0);
    let c = weak.num_classes;
    pair_srm(high, &mut pair_rng)
        .into_iter()
        .map(|(i, j)| {
            let mut mix_rng = rng::stream(seed, "mix_srm", iteration, i as u64);
            let (yi, yj) = (onehot(weak.argmax[i], c), onehot(weak.argmax[j], c));
            let outcome = mix_pair(strategy, (&views[i], &yi), (&views[j], &yj), alpha, &mut mix_rng)?;
            Ok(MixedSample { first: i, second: j, outcome })
        })
        .collect()
}

/// Pairs low-confidence members with high-confidence partners (class-aware,
/// or uniformly at random) and mixes their strong views. The low member's
/// soft prediction is the base label, the partner contributes its
/// pseudo-label.
#[allow(clippy::too_many_arguments)]
pub fn cam_mixes(
    low: &[usize],
    high: &[usize],
    views: &[Image],
    weak: &PredictionBatch,
    strategy: MixStrategy,
    alpha: f64,
    random_pairing: bool,
    seed: u64,
    iteration: u64,
) -> Result<Vec<MixedSample>> {
    let mut pair_rng = rng::stream(seed, "pair_cam", iteration, 0);
    let pairs = if random_pairing {
        pair_random(low, high, &mut pair_rng)
    } else {
        pair_cam(low, high, weak, &mut pair_rng)
    };
    let c = weak.num_classes;
    pairs
        .into_iter()
        .map(|(i, j)| {
            let mut mix_rng = rng::stream(seed, "mix_cam", iteration, i as u64);
            let (qi, yj) = (soft_label(weak, i), onehot(weak.argmax[j], c));
            let outcome = mix_pair(strategy, (&views[i], &qi), (&views[j], &yj), alpha, &mut mix_rng)?;
            Ok(MixedSample { first: i, second: j, outcome })
        })
        .collect()
}

/// Row assignment of one concatenated forward batch to the four terms.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossPlan {
    pub num_classes: usize,
    /// `(row, class)` pairs for the labeled term.
    pub labeled: Vec<(usize, usize)>,
    /// `(row, pseudo-label)` pairs for masked strong views.
    pub clean: Vec<(usize, usize)>,
    pub clean_divisor: usize,
    pub mixed: Vec<(usize, Vec<f64>)>,
    pub mixed_divisor: usize,
    pub cam: Vec<(usize, Vec<f64>)>,
    pub cam_divisor: usize,
}

/// Tape handles of a built plan.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub parts: LossParts,
}

fn flat_targets(rows: &[(usize, Vec<f64>)]) -> (Vec<usize>, Vec<f32>) {
    let idx = rows.iter().map(|(r, _)| *r).collect();
    let flat = rows.iter().flat_map(|(_, t)| t.iter().map(|&v| v as f32)).collect();
    (idx, flat)
}

fn hard_targets(rows: &[(usize, usize)], c: usize) -> Vec<(usize, Vec<f64>)> {
    rows.iter().map(|&(r, y)| (r, onehot(y, c))).collect()
}

fn scalar_of(tape: &Tape, v: Var) -> Result<f64> {
    tape.value(v)
        .item()
        .map(|x| x as f64)
        .ok_or_else(|| Error::Shape("loss term is not a scalar".into()))
}

impl LossPlan {
    /// Records all non-empty terms on `tape` and returns their sum.
    pub fn build(&self, tape: &mut Tape, logits: Var) -> Result<LossVars> {
        let c = self.num_classes;
        if self.labeled.is_empty() {
            return Err(Error::InvalidArgument("loss plan without labeled rows".into()));
        }
        let mut parts = LossParts::default();
        let (rows, t) = flat_targets(&hard_targets(&self.labeled, c));
        let mut total = tape.softmax_cross_entropy(logits, &rows, &t, 1.0 / self.labeled.len() as f32)?;
        parts.l_s = scalar_of(tape, total)?;

        let terms: [(&[(usize, Vec<f64>)], usize, bool, &mut f64); 3] = [
            (&hard_targets(&self.clean, c), self.clean_divisor, false, &mut parts.l_u),
            (&self.mixed, self.mixed_divisor, false, &mut parts.l_m),
            (&self.cam, self.cam_divisor, true, &mut parts.l_cm),
        ];
        for (rows, divisor, squared, slot) in terms {
            if rows.is_empty() || divisor == 0 {
                continue;
            }
            let (idx, t) = flat_targets(rows);
            let scale = 1.0 / divisor as f32;
            let term = if squared {
                tape.softmax_squared_error(logits, &idx, &t, scale)?
            } else {
                tape.softmax_cross_entropy(logits, &idx, &t, scale)?
            };
            *slot = scalar_of(tape, term)?;
            total = tape.add(total, term)?;
        }
        Ok(LossVars { total, parts })
    }

    /// Value-level evaluation of the same terms on given predictions.
    pub fn evaluate(&self, preds: &PredictionBatch) -> LossParts {
        let c = self.num_classes;
        let ce = |rows: &[(usize, Vec<f64>)], d: usize| {
            if d == 0 {
                return 0.0;
            }
            rows.iter().map(|(r, t)| cross_entropy(t, preds.row(*r))).sum::<f64>() / d as f64
        };
        let sq = |rows: &[(usize, Vec<f64>)], d: usize| {
            if d == 0 {
                return 0.0;
            }
            rows.iter().map(|(r, t)| squared_error(t, preds.row(*r))).sum::<f64>() / d as f64
        };
        LossParts {
            l_s: ce(&hard_targets(&self.labeled, c), self.labeled.len()),
            l_u: ce(&hard_targets(&self.clean, c), self.clean_divisor),
            l_m: ce(&self.mixed, self.mixed_divisor),
            l_cm: sq(&self.cam, self.cam_divisor),
        }
    }
}
