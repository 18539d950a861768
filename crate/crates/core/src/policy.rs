//! The interface every acquisition method implements.

use rand::seq::IndexedRandom;

use nnkit::Matrix;

use crate::env::{batch_matrices, AcquisitionState};
use crate::error::{AfaError, Result};
use crate::predictor::Classifier;
use crate::rng::SeededRng;

pub trait Policy: Send + Sync {
    fn name(&self) -> &str;

    /// Next feature to acquire. Must be unobserved in `state`.
    fn select(&self, state: &AcquisitionState, rng: &mut SeededRng) -> Result<usize>;

    /// Classifier trained jointly with the policy, if the method has one.
    fn builtin_classifier(&self) -> Option<&dyn Classifier> {
        None
    }
}

/// Uniformly random unobserved feature.
#[derive(Clone, Debug, Default)]
pub struct RandomPolicy;

impl Policy for RandomPolicy {
    fn name(&self) -> &str {
        "random"
    }

    fn select(&self, state: &AcquisitionState, rng: &mut SeededRng) -> Result<usize> {
        state
            .legal_actions()
            .choose(rng)
            .copied()
            .ok_or(AfaError::NoLegalFeature)
    }
}

/// Index of the largest finite-or-not score among unobserved features; ties
/// go to the lowest index.
pub fn argmax_legal(scores: &[f64], state: &AcquisitionState) -> Result<usize> {
    let mut best: Option<usize> = None;
    for i in state.legal_actions() {
        if best.is_none_or(|b| scores[i] > scores[b]) {
            best = Some(i);
        }
    }
    best.ok_or(AfaError::NoLegalFeature)
}

/// Rolls `policy` out for `budget` acquisitions on every row of `features`.
pub fn rollout(
    policy: &dyn Policy,
    features: &Matrix,
    budget: usize,
    rng: &mut SeededRng,
) -> Result<Vec<AcquisitionState>> {
    (0..features.rows())
        .map(|i| {
            let mut s = AcquisitionState::new(i, features.cols(), budget)?;
            while !s.is_done() {
                let a = policy.select(&s, rng)?;
                s.acquire(a, features[(i, a)])?;
            }
            Ok(s)
        })
        .collect()
}

/// Fraction of states whose argmax prediction equals `labels[state.instance]`.
pub fn terminal_accuracy(
    classifier: &dyn Classifier,
    states: &[AcquisitionState],
    labels: &[usize],
) -> Result<f64> {
    if states.is_empty() {
        return Ok(0.0);
    }
    let (v, m) = batch_matrices(states);
    let preds = classifier.predict_proba(&v, &m)?.argmax_rows();
    let hits = states
        .iter()
        .zip(preds)
        .filter(|(s, p)| labels[s.instance] == *p)
        .count();
    Ok(hits as f64 / states.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn random_policy_only_picks_legal() {
        let mut s = AcquisitionState::new(0, 4, 4).unwrap();
        let mut rng = seeded(0);
        for _ in 0..4 {
            let a = RandomPolicy.select(&s, &mut rng).unwrap();
            s.acquire(a, 0.0).unwrap();
        }
        let mut seen = s.observed.clone();
        seen.sort_unstable();
        assert_eq!(seen, vec![0, 1, 2, 3]);
    }

    #[test]
    fn argmax_skips_observed() {
        let mut s = AcquisitionState::new(0, 3, 3).unwrap();
        s.acquire(1, 0.0).unwrap();
        assert_eq!(argmax_legal(&[0.1, 0.9, 0.3], &s).unwrap(), 2);
        assert_eq!(argmax_legal(&[0.5, 0.9, 0.5], &s).unwrap(), 0);
    }
}
