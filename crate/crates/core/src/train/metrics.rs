use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `(1 + β²)·P·R / (β²·P + R)`, zero when both are zero.
pub fn f_beta(precision: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let denom = b2 * precision + recall;
    if denom == 0.0 {
        0.0
    } else {
        (1.0 + b2) * precision * recall / denom
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub f2: f64,
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub macro_f2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub mae: f64,
    pub mse: f64,
    /// Number of values compared.
    pub count: u64,
}

/// Outcome of an evaluation, serialized as the metrics JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub classification: Option<ClassificationMetrics>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub regression: Option<RegressionMetrics>,
    /// The reference method scored on the same data (persistence or mean imputation).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub baseline: Option<RegressionMetrics>,
    /// Set when there was nothing to score, e.g. no missing patches.
    #[serde(default)]
    pub no_missing: bool,
}

impl MetricsReport {
    pub fn classification(task: impl Into<String>, m: ClassificationMetrics) -> Self {
        Self {
            task: task.into(),
            classification: Some(m),
            regression: None,
            baseline: None,
            no_missing: false,
        }
    }

    pub fn regression(task: impl Into<String>, m: RegressionMetrics, baseline: Option<RegressionMetrics>) -> Self {
        Self {
            task: task.into(),
            no_missing: m.count == 0,
            classification: None,
            regression: Some(m),
            baseline,
        }
    }
}

/// Confusion matrix and derived scores.
///
/// Macro averages run over the classes that occur in either `labels` or
/// `preds`; a class that never occurs in either is left out rather than
/// scored zero. Precision (recall) is zero for a present class with no
/// predictions (no support).
pub fn classification_metrics(preds: &[usize], labels: &[usize], n_classes: usize) -> Result<ClassificationMetrics> {
    if preds.len() != labels.len() {
        return Err(Error::InvalidData(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut confusion = vec![vec![0u64; n_classes]; n_classes];
    for (&p, &y) in preds.iter().zip(labels) {
        if p >= n_classes || y >= n_classes {
            return Err(Error::InvalidData(format!(
                "class {} outside 0..{n_classes}",
                p.max(y)
            )));
        }
        confusion[y][p] += 1;
    }
    let total = labels.len() as u64;
    let correct: u64 = (0..n_classes).map(|k| confusion[k][k]).sum();
    let accuracy = if total == 0 { 0.0 } else { correct as f64 / total as f64 };

    let mut per_class = Vec::with_capacity(n_classes);
    let mut present = Vec::new();
    for k in 0..n_classes {
        let tp = confusion[k][k];
        let support: u64 = confusion[k].iter().sum();
        let predicted: u64 = confusion.iter().map(|row| row[k]).sum();
        let precision = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
        let recall = if support == 0 { 0.0 } else { tp as f64 / support as f64 };
        if support > 0 || predicted > 0 {
            present.push(k);
        }
        per_class.push(ClassMetrics {
            precision,
            recall,
            f1: f_beta(precision, recall, 1.0),
            f2: f_beta(precision, recall, 2.0),
            support,
        });
    }
    let avg = |f: fn(&ClassMetrics) -> f64| {
        if present.is_empty() {
            0.0
        } else {
            present.iter().map(|&k| f(&per_class[k])).sum::<f64>() / present.len() as f64
        }
    };
    Ok(ClassificationMetrics {
        accuracy,
        macro_precision: avg(|c| c.precision),
        macro_recall: avg(|c| c.recall),
        macro_f1: avg(|c| c.f1),
        macro_f2: avg(|c| c.f2),
        confusion,
        per_class,
    })
}

/// Mean absolute and mean squared error; both zero for empty input.
pub fn regression_metrics(preds: &[f64], targets: &[f64]) -> Result<RegressionMetrics> {
    if preds.len() != targets.len() {
        return Err(Error::InvalidData(format!(
            "{} predictions for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    let n = preds.len();
    let (mut abs, mut sq) = (0.0, 0.0);
    for (p, t) in preds.iter().zip(targets) {
        let d = p - t;
        abs += d.abs();
        sq += d * d;
    }
    let denom = n.max(1) as f64;
    Ok(RegressionMetrics {
        mae: abs / denom,
        mse: sq / denom,
        count: n as u64,
    })
}
