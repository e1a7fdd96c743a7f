//! Thresholding and evaluation of anomaly scores.
//!
//! The decision rule is fixed: a sample is anomalous iff its score is
//! *strictly* greater than `mean + std` of the training scores, where `std`
//! is the population standard deviation (1/n). Metrics are macro-averaged
//! over the two classes; any 0/0 ratio is reported as 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    /// Decision boundary: `mean + std`.
    pub thr: f64,
    pub mean: f64,
    /// Population standard deviation of the training scores.
    pub std: f64,
    pub n_train: usize,
}

/// Mean and population deviation of `scores` via Welford's single-pass
/// update.
pub fn compute_threshold(scores: &[f64]) -> Result<Threshold> {
    if scores.is_empty() {
        return Err(Error::EmptyInput { what: "threshold scores".to_string() });
    }
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, &s) in scores.iter().enumerate() {
        if !s.is_finite() {
            return Err(Error::NonFinite { context: format!("score {i}") });
        }
        let delta = s - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (s - mean);
    }
    let std = (m2 / scores.len() as f64).sqrt();
    Ok(Threshold { thr: mean + std, mean, std, n_train: scores.len() })
}

/// Strict comparison: a score exactly at the threshold is normal.
pub fn classify(scores: &[f64], thr: f64) -> Vec<bool> {
    scores.iter().map(|&s| s > thr).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of ground-truth members of the class.
    pub support: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub normal: ClassMetrics,
    pub anomalous: ClassMetrics,
    /// `confusion[truth][prediction]`, index 0 = normal, 1 = anomalous.
    pub confusion: [[usize; 2]; 2],
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Macro precision/recall/F1 of a prediction against ground truth
/// (`true` = anomalous). The truth must contain both classes.
pub fn evaluate(pred: &[bool], truth: &[bool]) -> Result<Metrics> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch { left: pred.len(), right: truth.len() });
    }
    if truth.is_empty() {
        return Err(Error::EmptyInput { what: "ground truth".to_string() });
    }
    if truth.iter().all(|&t| t) || truth.iter().all(|&t| !t) {
        return Err(Error::SingleClassTruth);
    }
    let mut confusion = [[0usize; 2]; 2];
    for (&p, &t) in pred.iter().zip(truth) {
        confusion[t as usize][p as usize] += 1;
    }
    let class = |k: usize| -> ClassMetrics {
        let tp = confusion[k][k];
        let fp = confusion[1 - k][k];
        let fn_ = confusion[k][1 - k];
        let p = ratio(tp, tp + fp);
        let r = ratio(tp, tp + fn_);
        ClassMetrics { precision: p, recall: r, f1: f1(p, r), support: confusion[k][0] + confusion[k][1] }
    };
    let normal = class(0);
    let anomalous = class(1);
    Ok(Metrics {
        macro_precision: (normal.precision + anomalous.precision) / 2.0,
        macro_recall: (normal.recall + anomalous.recall) / 2.0,
        macro_f1: (normal.f1 + anomalous.f1) / 2.0,
        normal,
        anomalous,
        confusion,
    })
}
