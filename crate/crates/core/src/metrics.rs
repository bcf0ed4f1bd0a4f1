//! Diagnostics over prediction batches: purity, reliability and top-k
//! accuracy.

use crate::confidence::PredictionBatch;
use crate::error::{Error, Result};

/// Fraction of samples whose top probability is at least `threshold`.
pub fn purity(preds: &PredictionBatch, threshold: f64) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::InvalidArgument("purity of an empty batch".into()));
    }
    let hits = preds.max_conf.iter().filter(|&&c| c as f64 >= threshold).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Accuracy among samples whose top probability is at least `threshold`;
/// `None` when no sample qualifies.
pub fn reliability(preds: &PredictionBatch, labels: &[usize], threshold: f64) -> Option<f64> {
    let mut passed = 0usize;
    let mut correct = 0usize;
    for (b, &label) in labels.iter().enumerate().take(preds.len()) {
        if preds.max_conf[b] as f64 >= threshold {
            passed += 1;
            correct += usize::from(preds.argmax[b] == label);
        }
    }
    (passed > 0).then(|| correct as f64 / passed as f64)
}

/// Whether `label` is among the `k` largest entries of `row`, ranking equal
/// probabilities by lower class index first.
pub fn in_top_k(row: &[f32], label: usize, k: usize) -> bool {
    let p = row[label];
    let ahead = row
        .iter()
        .enumerate()
        .filter(|&(c, &v)| v > p || (v == p && c < label))
        .count();
    ahead < k
}

pub fn topk_accuracy(preds: &PredictionBatch, labels: &[usize], k: usize) -> Result<f64> {
    if k == 0 || k > preds.num_classes {
        return Err(Error::InvalidArgument(format!(
            "k = {k} outside 1..={}",
            preds.num_classes
        )));
    }
    if preds.is_empty() || labels.len() != preds.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions, {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let hits = labels
        .iter()
        .enumerate()
        .filter(|&(b, &l)| in_top_k(preds.row(b), l, k))
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// One metrics-file row.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DiagnosticRow {
    pub iteration: u64,
    pub l_s: f64,
    pub l_u: f64,
    pub l_m: f64,
    pub l_cm: f64,
    pub total: f64,
    pub purity: Option<f64>,
    pub reliability: Option<f64>,
    pub top1: Option<f64>,
    pub top2: Option<f64>,
    pub test_error: Option<f64>,
    pub threshold_global: f64,
    pub size_h: usize,
    pub size_hc: usize,
    pub cam_matched: usize,
    pub wall_clock_s: f64,
}
