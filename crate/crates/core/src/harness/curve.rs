//! Budget curves: per-step metrics replayed from transcripts, and their
//! aggregation across runs.

use nnkit::Matrix;
use serde::{Deserialize, Serialize};

use super::metric::{metric, MetricKind};
use crate::datasets::TabularDataset;
use crate::env::{AcquisitionState, EpisodeTranscript};
use crate::error::{AfaError, Result};
use crate::predictor::Classifier;

/// Metric mean and sample standard deviation at acquisition steps `1..=b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetCurve {
    pub metric: MetricKind,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub n_runs: usize,
}

impl BudgetCurve {
    /// Aggregates equal-length per-run curves.
    pub fn from_runs(metric: MetricKind, runs: &[Vec<f64>]) -> Result<Self> {
        let Some(first) = runs.first() else {
            return Err(AfaError::config("no runs to aggregate"));
        };
        let steps = first.len();
        if runs.iter().any(|r| r.len() != steps) {
            return Err(AfaError::config("runs have different step counts"));
        }
        let n = runs.len() as f64;
        let mut mean = vec![0.0; steps];
        let mut std = vec![0.0; steps];
        for t in 0..steps {
            let m = runs.iter().map(|r| r[t]).sum::<f64>() / n;
            mean[t] = m;
            if runs.len() > 1 {
                let ss: f64 = runs.iter().map(|r| (r[t] - m).powi(2)).sum();
                std[t] = (ss / (n - 1.0)).sqrt();
            }
        }
        Ok(Self {
            metric,
            mean,
            std,
            n_runs: runs.len(),
        })
    }

    pub fn budget(&self) -> usize {
        self.mean.len()
    }

    pub fn terminal(&self) -> f64 {
        self.mean.last().copied().unwrap_or(f64::NAN)
    }
}

/// Transcripts of finished states.
pub fn transcripts_from_states(states: &[AcquisitionState]) -> Vec<EpisodeTranscript> {
    states
        .iter()
        .map(|s| EpisodeTranscript {
            instance: s.instance,
            actions: s.observed.clone(),
            rewards: Vec::new(),
        })
        .collect()
}

/// Fails unless every transcript holds exactly `budget` distinct features.
pub fn check_transcripts(transcripts: &[EpisodeTranscript], budget: usize) -> Result<()> {
    match transcripts.iter().find(|t| !t.has_distinct_actions(budget)) {
        None => Ok(()),
        Some(t) => Err(AfaError::config(format!(
            "instance {} acquired {:?}, expected {budget} distinct features",
            t.instance, t.actions
        ))),
    }
}

/// Metric after each of the `budget` acquisitions, recomputed from the
/// transcripts and the test split alone.
pub fn replay_curve(
    classifier: &dyn Classifier,
    test: &TabularDataset,
    transcripts: &[EpisodeTranscript],
    budget: usize,
    kind: MetricKind,
) -> Result<Vec<f64>> {
    check_transcripts(transcripts, budget)?;
    let n = transcripts.len();
    let d = test.num_features();
    let mut values = Matrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    for (r, t) in transcripts.iter().enumerate() {
        if t.instance >= test.len() {
            return Err(AfaError::config(format!("transcript for missing instance {}", t.instance)));
        }
        values.row_mut(r).copy_from_slice(test.features.row(t.instance));
        labels.push(test.labels[t.instance]);
    }
    let mut mask = Matrix::zeros(n, d);
    let mut curve = Vec::with_capacity(budget);
    for step in 0..budget {
        for (r, t) in transcripts.iter().enumerate() {
            mask[(r, t.actions[step])] = 1.0;
        }
        let preds = classifier.predict_proba(&values, &mask)?.argmax_rows();
        curve.push(metric(&preds, &labels, kind)?);
    }
    Ok(curve)
}
