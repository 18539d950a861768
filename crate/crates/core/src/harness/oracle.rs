//! Scripted lookahead policy for AFAContext.
//!
//! Acquires the context feature first, then works inside the active group
//! only, picking the feature with the largest exact conditional mutual
//! information under the known generative model.

use crate::datasets::{AfaContextSpec, DatasetSplits, GeneratorSpec};
use crate::env::AcquisitionState;
use crate::error::{AfaError, Result};
use crate::policy::Policy;
use crate::rng::SeededRng;

/// Half-width (in standard deviations) and resolution of the quadrature grid.
const GRID_HALF_WIDTH: f64 = 6.0;
const GRID_POINTS: usize = 121;

#[derive(Clone, Debug)]
pub struct LookaheadOracle {
    pub spec: AfaContextSpec,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl LookaheadOracle {
    pub fn new(spec: AfaContextSpec) -> Self {
        let step = 2.0 * GRID_HALF_WIDTH / (GRID_POINTS - 1) as f64;
        let nodes: Vec<f64> = (0..GRID_POINTS)
            .map(|k| -GRID_HALF_WIDTH + k as f64 * step)
            .collect();
        let raw: Vec<f64> = nodes.iter().map(|z| (-0.5 * z * z).exp()).collect();
        let total: f64 = raw.iter().sum();
        let weights = raw.into_iter().map(|w| w / total).collect();
        Self {
            spec,
            nodes,
            weights,
        }
    }

    /// Oracle for a generated AFAContext dataset.
    pub fn for_dataset(data: &DatasetSplits) -> Result<Self> {
        match &data.manifest.generator {
            Some(GeneratorSpec::AfaContext(spec)) => Ok(Self::new(spec.clone())),
            _ => Err(AfaError::WrongDataset {
                expected: "afacontext".into(),
                found: data.manifest.name.clone(),
            }),
        }
    }

    /// Context implied by the observed context features, if any.
    pub fn resolved_context(&self, state: &AcquisitionState) -> Option<usize> {
        self.spec
            .context
            .iter()
            .find(|&&f| state.is_observed(f))
            .and_then(|&f| self.spec.context_from(f, state.values[f]))
    }

    /// Class posterior given the observed features of the active group.
    pub fn class_posterior(&self, state: &AcquisitionState, context: usize) -> Vec<f64> {
        let k = self.spec.n_classes;
        let mut log_post = vec![0.0; k];
        for (y, lp) in log_post.iter_mut().enumerate() {
            let means = self.spec.class_means(context, y);
            let sigmas = self.spec.class_sigmas(context, y);
            for j in self.spec.group(context).filter(|&j| state.is_observed(j)) {
                *lp += log_normal(state.values[j], means[j], sigmas[j]);
            }
        }
        normalize_log(&log_post)
    }

    /// `I(y; x_j | observed)` for feature `j` of the active group.
    pub fn conditional_mi(&self, posterior: &[f64], context: usize, j: usize) -> f64 {
        let k = posterior.len();
        let params: Vec<(f64, f64)> = (0..k)
            .map(|y| {
                (
                    self.spec.class_means(context, y)[j],
                    self.spec.class_sigmas(context, y)[j],
                )
            })
            .collect();
        let mut expected = 0.0;
        let mut logs = vec![0.0; k];
        for (y, &py) in posterior.iter().enumerate() {
            if py < 1e-15 {
                continue;
            }
            let (mu, sd) = params[y];
            let mut inner = 0.0;
            for (z, w) in self.nodes.iter().zip(&self.weights) {
                let x = mu + sd * z;
                for (c, l) in logs.iter_mut().enumerate() {
                    *l = if posterior[c] > 0.0 {
                        posterior[c].ln() + log_normal(x, params[c].0, params[c].1)
                    } else {
                        f64::NEG_INFINITY
                    };
                }
                inner += w * entropy(&normalize_log(&logs));
            }
            expected += py * inner;
        }
        (entropy(posterior) - expected).max(0.0)
    }

    /// Next feature for `state`.
    pub fn choose(&self, state: &AcquisitionState) -> Result<usize> {
        let [f1, f2] = self.spec.context;
        if !state.is_observed(f1) {
            return Ok(f1);
        }
        let Some(context) = self.resolved_context(state) else {
            if !state.is_observed(f2) {
                return Ok(f2);
            }
            return state.legal_actions().first().copied().ok_or(AfaError::NoLegalFeature);
        };
        let posterior = self.class_posterior(state, context);
        let mut best: Option<(usize, f64)> = None;
        for j in self.spec.group(context).filter(|&j| !state.is_observed(j)) {
            let score = self.conditional_mi(&posterior, context, j);
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((j, score));
            }
        }
        if let Some((j, _)) = best {
            return Ok(j);
        }
        let inactive = self.spec.group(1 - context);
        state
            .legal_actions()
            .into_iter()
            .find(|j| !inactive.contains(j))
            .or_else(|| state.legal_actions().first().copied())
            .ok_or(AfaError::NoLegalFeature)
    }
}

/// Oracle decision for `state` under `spec`.
pub fn oracle_afacontext(state: &AcquisitionState, spec: &AfaContextSpec) -> Result<usize> {
    LookaheadOracle::new(spec.clone()).choose(state)
}

impl Policy for LookaheadOracle {
    fn name(&self) -> &str {
        "oracle"
    }

    fn select(&self, state: &AcquisitionState, _rng: &mut SeededRng) -> Result<usize> {
        self.choose(state)
    }
}

fn log_normal(x: f64, mean: f64, sd: f64) -> f64 {
    if sd <= 0.0 {
        return if (x - mean).abs() < 1e-9 { 0.0 } else { f64::NEG_INFINITY };
    }
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

fn normalize_log(logs: &[f64]) -> Vec<f64> {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return vec![1.0 / logs.len() as f64; logs.len()];
    }
    let exps: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{generate_afacontext, generate_cube, CubeSpec};

    fn oracle() -> LookaheadOracle {
        LookaheadOracle::new(AfaContextSpec::default())
    }

    #[test]
    fn fresh_state_acquires_first_context_feature() {
        let o = oracle();
        let s = AcquisitionState::new(0, 30, 5).unwrap();
        assert_eq!(o.choose(&s).unwrap(), o.spec.context[0]);
    }

    #[test]
    fn stays_inside_the_active_group() {
        let o = oracle();
        for (f1, context) in [(1.0, 0), (0.0, 1)] {
            let mut s = AcquisitionState::new(0, 30, 10).unwrap();
            s.acquire(0, f1).unwrap();
            let group = o.spec.group(context);
            for _ in 0..9 {
                let a = o.choose(&s).unwrap();
                assert!(group.contains(&a) || a == o.spec.context[1], "{a} outside {group:?}");
                s.acquire(a, 0.9).unwrap();
            }
        }
    }

    #[test]
    fn mutual_information_of_a_deterministic_bit() {
        // A feature equal to a fair bit with negligible noise carries ln 2.
        let spec = AfaContextSpec {
            informative_sigma: 1e-3,
            ..AfaContextSpec::default()
        };
        let o = LookaheadOracle::new(spec);
        let mut post = vec![0.0; 8];
        // Feature g + 5 is bit 1 of class 4 (0) and bit 0 of class 5 (1).
        post[4] = 0.5;
        post[5] = 0.5;
        let g = o.spec.group_start(0);
        let mi = o.conditional_mi(&post, 0, g + 5);
        assert!((mi - 2f64.ln()).abs() < 1e-6, "{mi}");
    }

    #[test]
    fn information_vanishes_for_a_feature_outside_both_windows() {
        let o = oracle();
        let mut post = vec![0.0; 8];
        post[0] = 0.5;
        post[1] = 0.5;
        let g = o.spec.group_start(0);
        // Feature g + 9 is informative only for class 7.
        assert!(o.conditional_mi(&post, 0, g + 9) < 1e-12);
    }

    #[test]
    fn rejects_other_datasets() {
        let cube = generate_cube(&CubeSpec::default(), 0).unwrap();
        assert!(matches!(
            LookaheadOracle::for_dataset(&cube),
            Err(AfaError::WrongDataset { .. })
        ));
        let ctx = generate_afacontext(&AfaContextSpec::default(), 0).unwrap();
        assert!(LookaheadOracle::for_dataset(&ctx).is_ok());
    }
}
