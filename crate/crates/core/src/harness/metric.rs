//! Evaluation metrics.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{AfaError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Accuracy,
    /// Macro-averaged F1 over the classes that occur in labels or predictions.
    F1,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Accuracy => "accuracy",
            MetricKind::F1 => "f1",
        }
    }

    /// Axis label used in plots.
    pub fn label(self) -> &'static str {
        match self {
            MetricKind::Accuracy => "Accuracy",
            MetricKind::F1 => "F1",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricKind {
    type Err = AfaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy" => Ok(MetricKind::Accuracy),
            "f1" => Ok(MetricKind::F1),
            other => Err(AfaError::config(format!("unknown metric '{other}'"))),
        }
    }
}

pub fn metric(predictions: &[usize], labels: &[usize], kind: MetricKind) -> Result<f64> {
    if predictions.is_empty() {
        return Err(AfaError::config("metric of an empty prediction set"));
    }
    if predictions.len() != labels.len() {
        return Err(AfaError::config(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    Ok(match kind {
        MetricKind::Accuracy => accuracy(predictions, labels),
        MetricKind::F1 => macro_f1(predictions, labels),
    })
}

fn accuracy(predictions: &[usize], labels: &[usize]) -> f64 {
    let hits = predictions.iter().zip(labels).filter(|(p, y)| p == y).count();
    hits as f64 / labels.len() as f64
}

fn macro_f1(predictions: &[usize], labels: &[usize]) -> f64 {
    let k = predictions.iter().chain(labels).copied().max().unwrap_or(0) + 1;
    let mut tp = vec![0usize; k];
    let mut fp = vec![0usize; k];
    let mut fneg = vec![0usize; k];
    for (&p, &y) in predictions.iter().zip(labels) {
        if p == y {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fneg[y] += 1;
        }
    }
    let mut total = 0.0;
    let mut present = 0;
    for c in 0..k {
        if tp[c] + fp[c] + fneg[c] == 0 {
            continue;
        }
        present += 1;
        total += 2.0 * tp[c] as f64 / (2 * tp[c] + fp[c] + fneg[c]) as f64;
    }
    total / present as f64
}
