//! Per-AU F1 and accuracy.

use std::fmt::Write as _;

use crate::error::{CoreError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AuScore {
    pub au: u32,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub f1: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub per_au: Vec<AuScore>,
    pub mean_f1: f64,
    pub mean_accuracy: f64,
}

/// F1 with the convention `0/0 = 0` for both precision and recall.
pub fn f1_score(tp: usize, fp: usize, fn_: usize) -> f64 {
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let p = ratio(tp, tp + fp);
    let r = ratio(tp, tp + fn_);
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn binarize(probs: &[f64], threshold: f64) -> Vec<bool> {
    probs.iter().map(|&p| p >= threshold).collect()
}

/// `preds` and `labels` are row-major `[samples × aus.len()]`.
pub fn f1_and_accuracy(preds: &[bool], labels: &[bool], aus: &[u32]) -> Result<MetricsReport> {
    let n = aus.len();
    if n == 0 || preds.len() != labels.len() || !preds.len().is_multiple_of(n) || preds.is_empty() {
        return Err(CoreError::Argument(format!(
            "{} predictions, {} labels for {n} AUs",
            preds.len(),
            labels.len()
        )));
    }
    let per_au: Vec<AuScore> = aus
        .iter()
        .enumerate()
        .map(|(i, &au)| {
            let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
            for (p, y) in preds.iter().skip(i).step_by(n).zip(labels.iter().skip(i).step_by(n)) {
                match (p, y) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    (false, false) => tn += 1,
                }
            }
            AuScore {
                au,
                tp,
                fp,
                fn_,
                tn,
                f1: f1_score(tp, fp, fn_),
                accuracy: (tp + tn) as f64 / (tp + fp + fn_ + tn) as f64,
            }
        })
        .collect();
    let mean_f1 = per_au.iter().map(|s| s.f1).sum::<f64>() / n as f64;
    let mean_accuracy = per_au.iter().map(|s| s.accuracy).sum::<f64>() / n as f64;
    Ok(MetricsReport {
        per_au,
        mean_f1,
        mean_accuracy,
    })
}

impl MetricsReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("au_id,f1,accuracy\n");
        for s in &self.per_au {
            let _ = writeln!(out, "{},{:.4},{:.4}", s.au, s.f1, s.accuracy);
        }
        let _ = writeln!(out, "mean,{:.4},{:.4}", self.mean_f1, self.mean_accuracy);
        out
    }
}
