//! Ranking and thresholded classification metrics.

use serde::{Deserialize, Serialize};

use crate::error::{HvanError, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Pairwise concordance of scores with labels: the mean over all
/// (positive, negative) pairs of 1 if the positive scores higher, 1/2 on a
/// tie, 0 otherwise.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(HvanError::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(HvanError::Numeric("NaN score".into()));
    }
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &y)| y == 1).map(|(&s, _)| s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &y)| y != 1).map(|(&s, _)| s).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(HvanError::Data("AUC is undefined without both classes".into()));
    }
    let mut concordant = 0.0;
    for &p in &pos {
        for &n in &neg {
            concordant += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    Ok(concordant / (pos.len() * neg.len()) as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn from_predictions(probs: &[f64], labels: &[u8], threshold: f64) -> Self {
        let mut c = Self::default();
        for (&p, &y) in probs.iter().zip(labels) {
            match (p >= threshold, y == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Metrics of one evaluation. `None` marks a metric whose denominator is
/// zero; it serializes as `null`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auc: Option<f64>,
    pub f1: Option<f64>,
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl MetricsReport {
    /// Thresholded metrics from counts; `auc` is left unset.
    pub fn from_confusion(c: Confusion) -> Self {
        let precision = ratio(c.tp, c.tp + c.fp);
        let sensitivity = ratio(c.tp, c.tp + c.fn_);
        let f1 = match (precision, sensitivity) {
            (Some(p), Some(s)) if p + s > 0.0 => Some(2.0 * p * s / (p + s)),
            _ => None,
        };
        Self {
            auc: None,
            f1,
            accuracy: ratio(c.tp + c.tn, c.total()),
            sensitivity,
            specificity: ratio(c.tn, c.tn + c.fp),
            tp: c.tp,
            fp: c.fp,
            tn: c.tn,
            fn_: c.fn_,
        }
    }

    pub fn confusion(&self) -> Confusion {
        Confusion {
            tp: self.tp,
            fp: self.fp,
            tn: self.tn,
            fn_: self.fn_,
        }
    }
}

/// Counts and thresholded metrics, plus AUC when both classes are present.
pub fn confusion_metrics(probs: &[f64], labels: &[u8], threshold: f64) -> Result<MetricsReport> {
    if probs.is_empty() || probs.len() != labels.len() {
        return Err(HvanError::Data(format!(
            "need matching nonempty predictions and labels, got {} and {}",
            probs.len(),
            labels.len()
        )));
    }
    let mut report = MetricsReport::from_confusion(Confusion::from_predictions(probs, labels, threshold));
    report.auc = auc(probs, labels).ok();
    Ok(report)
}
