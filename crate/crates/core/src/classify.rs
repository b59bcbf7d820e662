//! Two-denoiser reconstruction-error classification and confusion-matrix
//! metrics. Class 1 is the positive class.

use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::unrolled::{denoise, DenoiserModel};

/// The class-0 and class-1 denoisers.
#[derive(Debug, Clone)]
pub struct ClassifierPair {
    pub psi: [DenoiserModel; 2],
    /// Class returned when both errors are exactly equal.
    pub tie_class: u8,
}

/// Decision for one signal together with both reconstruction errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub class: u8,
    pub err0: f64,
    pub err1: f64,
}

/// `argmin_c err_c`, ties going to `tie_class`.
pub fn decide(err0: f64, err1: f64, tie_class: u8) -> u8 {
    if err0 < err1 {
        0
    } else if err1 < err0 {
        1
    } else {
        tie_class
    }
}

impl ClassifierPair {
    pub fn new(psi0: DenoiserModel, psi1: DenoiserModel) -> Result<Self> {
        if psi0.chunking != psi1.chunking {
            return Err(Error::InvalidModel(format!(
                "denoisers disagree on chunking: {:?} vs {:?}",
                psi0.chunking, psi1.chunking
            )));
        }
        if psi0.n_nodes() != psi1.n_nodes() {
            return Err(Error::InvalidModel(format!(
                "denoisers disagree on node count: {} vs {}",
                psi0.n_nodes(),
                psi1.n_nodes()
            )));
        }
        Ok(ClassifierPair {
            psi: [psi0, psi1],
            tie_class: 0,
        })
    }

    /// Classifies one chunked signal (`n_nodes x chunk_len`).
    pub fn classify(&self, y: ArrayView2<f64>) -> Result<Prediction> {
        let err = |m: &DenoiserModel| -> Result<f64> {
            let x = denoise(m, y)?;
            Ok(y.iter().zip(x.iter()).map(|(a, b)| (a - b) * (a - b)).sum())
        };
        let err0 = err(&self.psi[0])?;
        let err1 = err(&self.psi[1])?;
        Ok(Prediction {
            class: decide(err0, err1, self.tie_class),
            err0,
            err1,
        })
    }

    /// Classifies every signal, in order.
    pub fn classify_all(&self, signals: &[Array2<f64>]) -> Result<Vec<Prediction>> {
        signals.par_iter().map(|y| self.classify(y.view())).collect()
    }

    /// Classifies `signals` and scores the predictions against `labels`.
    pub fn evaluate(&self, signals: &[Array2<f64>], labels: &[u8]) -> Result<(MetricsReport, Vec<Prediction>)> {
        if signals.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: signals.len(),
                actual: labels.len(),
            });
        }
        let preds = self.classify_all(signals)?;
        let predicted: Vec<u8> = preds.iter().map(|p| p.class).collect();
        Ok((MetricsReport::from_labels(labels, &predicted)?, preds))
    }
}

/// Confusion counts and derived rates. A rate whose denominator is zero is
/// reported as 0 and its name is listed in `undefined`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub positive_class: u8,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub f1: f64,
    pub g_mean: f64,
    pub undefined: Vec<String>,
}

impl MetricsReport {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Result<Self> {
        let total = tp + fp + tn + fn_;
        if total == 0 {
            return Err(Error::EmptyPartition("test".into()));
        }
        let mut undefined = Vec::new();
        let mut ratio = |name: &str, num: usize, den: usize| {
            if den == 0 {
                undefined.push(name.to_string());
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let accuracy = ratio("accuracy", tp + tn, total);
        let precision = ratio("precision", tp, tp + fp);
        let recall = ratio("recall", tp, tp + fn_);
        let specificity = ratio("specificity", tn, tn + fp);
        let f1 = ratio("f1", 2 * tp, 2 * tp + fp + fn_);
        Ok(MetricsReport {
            positive_class: 1,
            tp,
            fp,
            tn,
            fn_,
            accuracy,
            precision,
            recall,
            specificity,
            f1,
            g_mean: (recall * specificity).sqrt(),
            undefined,
        })
    }

    pub fn from_labels(truth: &[u8], predicted: &[u8]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::DimensionMismatch {
                expected: truth.len(),
                actual: predicted.len(),
            });
        }
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for (&t, &p) in truth.iter().zip(predicted) {
            match (t == 1, p == 1) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (false, false) => tn += 1,
                (true, false) => fn_ += 1,
            }
        }
        Self::from_counts(tp, fp, tn, fn_)
    }

    pub fn n_samples(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Plain-text table with one row per named report.
pub fn metrics_table(rows: &[(String, &MetricsReport)]) -> String {
    let name_w = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(4);
    let mut out = String::new();
    let _ = writeln!(out, "# positive class: 1");
    let _ = writeln!(
        out,
        "{:<name_w$}  {:>5} {:>5} {:>5} {:>5}  {:>8} {:>9} {:>8} {:>11} {:>8} {:>8}",
        "name", "TP", "FP", "TN", "FN", "accuracy", "precision", "recall", "specificity", "f1", "g_mean"
    );
    for (name, r) in rows {
        let _ = writeln!(
            out,
            "{:<name_w$}  {:>5} {:>5} {:>5} {:>5}  {:>8.4} {:>9.4} {:>8.4} {:>11.4} {:>8.4} {:>8.4}",
            name, r.tp, r.fp, r.tn, r.fn_, r.accuracy, r.precision, r.recall, r.specificity, r.f1, r.g_mean
        );
    }
    out
}
