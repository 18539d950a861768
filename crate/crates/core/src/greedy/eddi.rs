//! EDDI-style information gain: sample the candidate feature from the PVAE
//! and measure how far it moves the predictor's class distribution.

use std::sync::Arc;

use nnkit::Matrix;

use super::pvae::Pvae;
use super::{greedy_select, CmiScores};
use crate::env::AcquisitionState;
use crate::error::{AfaError, Result};
use crate::policy::Policy;
use crate::predictor::Classifier;
use crate::rng::SeededRng;

pub const DEFAULT_MC_SAMPLES: usize = 50;

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a / b.max(f64::MIN_POSITIVE)).ln())
        .sum()
}

/// For each unobserved `i`: `mean_s KL(p(y | x_S, x_i^s) ‖ p(y | x_S))` with
/// `x^s ~ p(x | z^s)`, `z^s ~ q(z | x_S)`. Observed indices get `−∞`.
pub fn eddi_cmi(
    pvae: &Pvae,
    predictor: &dyn Classifier,
    state: &AcquisitionState,
    mc_samples: usize,
    rng: &mut SeededRng,
) -> Result<CmiScores> {
    if mc_samples == 0 {
        return Err(AfaError::config("mc_samples must be >= 1"));
    }
    let d = state.num_features();
    let legal = state.legal_actions();
    let mut scores = vec![f64::NEG_INFINITY; d];
    if legal.is_empty() {
        return Ok(CmiScores(scores));
    }
    let draws = pvae.sample(&state.values, &state.mask, mc_samples, rng)?;
    let base = predictor.predict_one(&state.masked_input())?;
    let rows = legal.len() * mc_samples;
    let mut values = Matrix::zeros(rows, d);
    let mut mask = Matrix::zeros(rows, d);
    for (k, &i) in legal.iter().enumerate() {
        for s in 0..mc_samples {
            let r = k * mc_samples + s;
            values.row_mut(r).copy_from_slice(&state.values);
            mask.row_mut(r).copy_from_slice(&state.mask);
            values[(r, i)] = draws[(s, i)];
            mask[(r, i)] = 1.0;
        }
    }
    let probs = predictor.predict_proba(&values, &mask)?;
    for (k, &i) in legal.iter().enumerate() {
        let total: f64 = (0..mc_samples)
            .map(|s| kl(probs.row(k * mc_samples + s), &base))
            .sum();
        scores[i] = total / mc_samples as f64;
    }
    Ok(CmiScores(scores))
}

/// EDDI-GG: greedy argmax of [`eddi_cmi`] against a fixed predictor.
pub struct EddiPolicy {
    pub pvae: Arc<Pvae>,
    pub predictor: Arc<dyn Classifier>,
    pub mc_samples: usize,
}

impl EddiPolicy {
    pub fn scores(&self, state: &AcquisitionState, rng: &mut SeededRng) -> Result<CmiScores> {
        eddi_cmi(&self.pvae, self.predictor.as_ref(), state, self.mc_samples, rng)
    }
}

impl Policy for EddiPolicy {
    fn name(&self) -> &str {
        "eddi"
    }

    fn select(&self, state: &AcquisitionState, rng: &mut SeededRng) -> Result<usize> {
        greedy_select(&self.scores(state, rng)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_of_identical_distributions_is_zero() {
        assert_eq!(kl(&[0.3, 0.7], &[0.3, 0.7]), 0.0);
        assert!((kl(&[1.0, 0.0], &[0.5, 0.5]) - 2f64.ln()).abs() < 1e-12);
    }
}
