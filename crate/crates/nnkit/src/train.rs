use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::mlp::Mlp;

/// Hyperparameters shared by every supervised training loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    /// Per-class loss weights. Empty means "derive from the training split".
    #[serde(default)]
    pub class_weights: Vec<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 128,
            max_epochs: 250,
            early_stop_patience: 10,
            class_weights: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(NnError::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(NnError::InvalidConfig("batch size must be >= 1".into()));
        }
        if self.class_weights.iter().any(|&w| !(w > 0.0)) {
            return Err(NnError::InvalidConfig("class weights must be > 0".into()));
        }
        Ok(())
    }

    /// Inverse class frequency, normalized to mean 1. Classes absent from
    /// `labels` get the largest observed weight.
    pub fn inverse_frequency_weights(labels: &[usize], num_classes: usize) -> Vec<f64> {
        let mut counts = vec![0usize; num_classes];
        for &y in labels {
            counts[y] += 1;
        }
        let raw: Vec<f64> = counts
            .iter()
            .map(|&c| if c > 0 { labels.len() as f64 / c as f64 } else { 0.0 })
            .collect();
        let max = raw.iter().copied().fold(0.0, f64::max).max(1.0);
        let filled: Vec<f64> = raw.iter().map(|&w| if w > 0.0 { w } else { max }).collect();
        let mean = filled.iter().sum::<f64>() / num_classes as f64;
        filled.into_iter().map(|w| w / mean).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Tracks the best validation loss and keeps a snapshot of the best model.
#[derive(Clone, Debug)]
pub struct EarlyStopping<T = Mlp> {
    patience: usize,
    best_loss: f64,
    best: Option<T>,
    epochs_since_best: usize,
}

impl<T: Clone> EarlyStopping<T> {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best_loss: f64::INFINITY,
            best: None,
            epochs_since_best: 0,
        }
    }

    /// Records one epoch's validation loss (lower is better).
    pub fn observe(&mut self, loss: f64, model: &T) -> StopDecision {
        if loss < self.best_loss {
            self.best_loss = loss;
            self.best = Some(model.clone());
            self.epochs_since_best = 0;
            StopDecision::Improved
        } else {
            self.epochs_since_best += 1;
            if self.epochs_since_best >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }

    pub fn best_loss(&self) -> f64 {
        self.best_loss
    }

    pub fn best(&self) -> Option<&T> {
        self.best.as_ref()
    }

    pub fn into_best(self) -> Option<T> {
        self.best
    }
}
