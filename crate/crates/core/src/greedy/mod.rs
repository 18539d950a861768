//! Greedy conditional-mutual-information acquisition.
//!
//! Every method here scores each unobserved feature by an estimate of
//! `I(y; x_i | x_S)` and acquires the argmax. The estimators differ:
//! - [`eddi`]: PVAE samples of `x_i` pushed through the predictor,
//! - [`gdfs`]: a selector network trained through a relaxed one-hot choice,
//! - [`dime`]: a value network regressing the observed loss reduction.

pub mod dime;
pub mod eddi;
pub mod gdfs;
pub mod pvae;

use nnkit::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::{AfaError, Result};

pub use dime::{train_dime, DimeConfig, DimeModel, DimePolicy};
pub use eddi::{eddi_cmi, EddiPolicy, DEFAULT_MC_SAMPLES};
pub use gdfs::{temperature_schedule, train_gdfs, GdfsConfig, GdfsModel, GdfsPolicy};
pub use pvae::{train_pvae, Pvae, PvaeConfig};

/// Per-feature scores; observed features hold `−∞`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CmiScores(pub Vec<f64>);

impl CmiScores {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Argmax over entries that are not `−∞`; ties go to the lowest index.
pub fn greedy_select(scores: &CmiScores) -> Result<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.0.iter().enumerate() {
        if s == f64::NEG_INFINITY {
            continue;
        }
        if best.is_none_or(|b| s > scores.0[b]) {
            best = Some(i);
        }
    }
    best.ok_or(AfaError::NoLegalFeature)
}

/// Per-row `−ln p_y`.
pub(crate) fn per_sample_ce(probs: &Matrix, labels: &[usize]) -> Vec<f64> {
    probs
        .iter_rows()
        .zip(labels)
        .map(|(p, &y)| -p[y].max(1e-300).ln())
        .collect()
}

pub(crate) fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

/// Scores with observed entries replaced by `−∞`.
pub(crate) fn mask_observed(mut raw: Vec<f64>, mask: &[f64]) -> CmiScores {
    for (s, &m) in raw.iter_mut().zip(mask) {
        if m != 0.0 {
            *s = f64::NEG_INFINITY;
        }
    }
    CmiScores(raw)
}
