//! Acquisition-conditioned approximate oracle (AACO).
//!
//! The expected loss after acquiring a subset `o'` is estimated from the k
//! training rows nearest to the instance on its observed coordinates: each
//! neighbor supplies values for `o'` and a label. The best subset among the
//! candidates is found, then one member of it is acquired.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::sync::Arc;

use nnkit::Matrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::TabularDataset;
use crate::env::AcquisitionState;
use crate::error::{AfaError, Result};
use crate::policy::Policy;
use crate::predictor::Classifier;
use crate::rng::SeededRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AacoConfig {
    pub k: usize,
    /// Per-feature acquisition cost.
    pub alpha: f64,
    /// Random candidate subsets per decision.
    pub n_samples: usize,
    /// Enumerate every subset when at most this many features are unobserved.
    pub exhaustive_up_to: usize,
}

impl Default for AacoConfig {
    fn default() -> Self {
        Self {
            k: 15,
            alpha: 0.0,
            n_samples: 1000,
            exhaustive_up_to: 0,
        }
    }
}

/// Training rows searched by masked Euclidean distance.
#[derive(Clone, Debug)]
pub struct KnnIndex {
    features: Matrix,
    labels: Vec<usize>,
    k: usize,
}

impl KnnIndex {
    pub fn new(train: &TabularDataset, k: usize) -> Result<Self> {
        if train.is_empty() {
            return Err(AfaError::Dataset("kNN index needs training rows".into()));
        }
        if k == 0 || k > train.len() {
            return Err(AfaError::config(format!(
                "k = {k} must lie in 1..={}",
                train.len()
            )));
        }
        Ok(Self {
            features: train.features.clone(),
            labels: train.labels.clone(),
            k,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `sqrt(Σ_{j∈S} (x_j − v_j)² / |S|)`; 0 when nothing is observed.
    pub fn distance(&self, row: usize, values: &[f64], mask: &[f64]) -> f64 {
        let x = self.features.row(row);
        let mut sum = 0.0;
        let mut count = 0usize;
        for j in 0..values.len() {
            if mask[j] != 0.0 {
                sum += (x[j] - values[j]).powi(2);
                count += 1;
            }
        }
        if count == 0 {
            0.0
        } else {
            (sum / count as f64).sqrt()
        }
    }

    /// Indices of the k nearest rows; ties go to the lower row index.
    pub fn neighbors(&self, values: &[f64], mask: &[f64]) -> Vec<usize> {
        let mut scored: Vec<(f64, usize)> = (0..self.len())
            .map(|r| (self.distance(r, values, mask), r))
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        scored.truncate(self.k);
        scored.into_iter().map(|(_, r)| r).collect()
    }
}

/// Mean neighbor loss after filling `subset` from each neighbor, plus
/// `alpha·|subset|`.
pub fn aaco_objective(
    state: &AcquisitionState,
    subset: &[usize],
    knn: &KnnIndex,
    predictor: &dyn Classifier,
    alpha: f64,
) -> Result<f64> {
    let neighbors = knn.neighbors(&state.values, &state.mask);
    objective_with(state, subset, &neighbors, knn, predictor, alpha)
}

fn objective_with(
    state: &AcquisitionState,
    subset: &[usize],
    neighbors: &[usize],
    knn: &KnnIndex,
    predictor: &dyn Classifier,
    alpha: f64,
) -> Result<f64> {
    Ok(batch_objectives(state, &[subset.to_vec()], neighbors, knn, predictor, alpha)?[0])
}

fn batch_objectives(
    state: &AcquisitionState,
    subsets: &[Vec<usize>],
    neighbors: &[usize],
    knn: &KnnIndex,
    predictor: &dyn Classifier,
    alpha: f64,
) -> Result<Vec<f64>> {
    for s in subsets {
        if let Some(&i) = s.iter().find(|&&i| i >= state.num_features() || state.is_observed(i)) {
            return Err(AfaError::RepeatedAction(i));
        }
    }
    let d = state.num_features();
    let k = neighbors.len();
    let rows = subsets.len() * k;
    let mut values = Matrix::zeros(rows, d);
    let mut mask = Matrix::zeros(rows, d);
    for (si, s) in subsets.iter().enumerate() {
        for (ni, &n) in neighbors.iter().enumerate() {
            let r = si * k + ni;
            values.row_mut(r).copy_from_slice(&state.values);
            mask.row_mut(r).copy_from_slice(&state.mask);
            for &i in s {
                values[(r, i)] = knn.features[(n, i)];
                mask[(r, i)] = 1.0;
            }
        }
    }
    let probs = predictor.predict_proba(&values, &mask)?;
    Ok(subsets
        .iter()
        .enumerate()
        .map(|(si, s)| {
            let loss: f64 = neighbors
                .iter()
                .enumerate()
                .map(|(ni, &n)| -probs[(si * k + ni, knn.labels[n])].max(f64::MIN_POSITIVE).ln())
                .sum();
            loss / k as f64 + alpha * s.len() as f64
        })
        .collect())
}

/// Candidate subsets: every singleton, plus either all subsets of size
/// `1..=max_size` or `n_samples` random ones with uniform size.
pub fn candidate_subsets(
    unobserved: &[usize],
    max_size: usize,
    cfg: &AacoConfig,
    rng: &mut SeededRng,
) -> Vec<Vec<usize>> {
    let max_size = max_size.min(unobserved.len());
    let mut set: BTreeSet<Vec<usize>> = unobserved.iter().map(|&i| vec![i]).collect();
    if max_size == 0 {
        return Vec::new();
    }
    if unobserved.len() <= cfg.exhaustive_up_to {
        let u = unobserved.len();
        for bits in 1u64..(1u64 << u) {
            if bits.count_ones() as usize <= max_size {
                let s: Vec<usize> = (0..u).filter(|&j| bits >> j & 1 == 1).map(|j| unobserved[j]).collect();
                set.insert(s);
            }
        }
    } else {
        let mut pool = unobserved.to_vec();
        for _ in 0..cfg.n_samples {
            let size = rng.random_range(1..=max_size);
            let (chosen, _) = pool.partial_shuffle(rng, size);
            let mut s = chosen.to_vec();
            s.sort_unstable();
            set.insert(s);
        }
    }
    set.into_iter().collect()
}

/// Orders candidates by objective, then size, then lexicographically.
fn better(a: (f64, &Vec<usize>), b: (f64, &Vec<usize>)) -> bool {
    match a.0.total_cmp(&b.0) {
        Ordering::Less => true,
        Ordering::Greater => false,
        Ordering::Equal => (a.1.len(), a.1) < (b.1.len(), b.1),
    }
}

/// Decision details, exposed for inspection and testing.
#[derive(Clone, Debug, PartialEq)]
pub struct AacoDecision {
    pub feature: usize,
    pub best_subset: Vec<usize>,
    pub best_objective: f64,
}

/// The best candidate subset, and its member with the lowest singleton
/// objective (ties to the lowest index).
pub fn aaco_decide(
    state: &AcquisitionState,
    knn: &KnnIndex,
    predictor: &dyn Classifier,
    cfg: &AacoConfig,
    rng: &mut SeededRng,
) -> Result<AacoDecision> {
    let unobserved = state.legal_actions();
    if unobserved.is_empty() || state.is_done() {
        return Err(AfaError::NoLegalFeature);
    }
    let neighbors = knn.neighbors(&state.values, &state.mask);
    let candidates = candidate_subsets(&unobserved, state.remaining(), cfg, rng);
    let scores = batch_objectives(state, &candidates, &neighbors, knn, predictor, cfg.alpha)?;
    let mut best = 0;
    for c in 1..candidates.len() {
        if better((scores[c], &candidates[c]), (scores[best], &candidates[best])) {
            best = c;
        }
    }
    let subset = candidates[best].clone();
    let feature = if subset.len() == 1 {
        subset[0]
    } else {
        let singles: Vec<Vec<usize>> = subset.iter().map(|&i| vec![i]).collect();
        let s = batch_objectives(state, &singles, &neighbors, knn, predictor, cfg.alpha)?;
        let mut pick = 0;
        for j in 1..subset.len() {
            if s[j] < s[pick] {
                pick = j;
            }
        }
        subset[pick]
    };
    Ok(AacoDecision {
        feature,
        best_subset: subset,
        best_objective: scores[best],
    })
}

pub fn aaco_select(
    state: &AcquisitionState,
    knn: &KnnIndex,
    predictor: &dyn Classifier,
    cfg: &AacoConfig,
    rng: &mut SeededRng,
) -> Result<usize> {
    Ok(aaco_decide(state, knn, predictor, cfg, rng)?.feature)
}

pub struct AacoPolicy {
    pub knn: KnnIndex,
    pub predictor: Arc<dyn Classifier>,
    pub config: AacoConfig,
}

impl AacoPolicy {
    pub fn new(train: &TabularDataset, predictor: Arc<dyn Classifier>, config: AacoConfig) -> Result<Self> {
        let k = config.k.min(train.len());
        Ok(Self {
            knn: KnnIndex::new(train, k)?,
            predictor,
            config,
        })
    }
}

impl Policy for AacoPolicy {
    fn name(&self) -> &str {
        "aaco"
    }

    fn select(&self, state: &AcquisitionState, rng: &mut SeededRng) -> Result<usize> {
        aaco_select(state, &self.knn, self.predictor.as_ref(), &self.config, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::Split;
    use crate::rng::seeded;

    fn tiny() -> TabularDataset {
        let x = Matrix::from_rows(&[[0.0, 1.0], [0.1, 5.0], [3.0, 1.0], [0.1, -1.0]]).unwrap();
        TabularDataset::new("t", Split::Train, x, vec![0, 1, 0, 1], 2).unwrap()
    }

    #[test]
    fn distance_normalizes_by_observed_count() {
        let knn = KnnIndex::new(&tiny(), 2).unwrap();
        assert_eq!(knn.distance(0, &[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert!((knn.distance(2, &[0.0, 0.0], &[1.0, 1.0]) - (10.0f64 / 2.0).sqrt()).abs() < 1e-12);
        assert!((knn.distance(2, &[0.0, 0.0], &[1.0, 0.0]) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn neighbor_ties_break_by_row() {
        let knn = KnnIndex::new(&tiny(), 3).unwrap();
        assert_eq!(knn.neighbors(&[0.0, 0.0], &[0.0, 0.0]), vec![0, 1, 2]);
        assert_eq!(knn.neighbors(&[0.1, 0.0], &[1.0, 0.0]), vec![1, 3, 0]);
    }

    #[test]
    fn invalid_k_rejected() {
        assert!(KnnIndex::new(&tiny(), 0).is_err());
        assert!(KnnIndex::new(&tiny(), 5).is_err());
    }

    #[test]
    fn singletons_always_present_and_sizes_bounded() {
        let cfg = AacoConfig {
            n_samples: 50,
            ..AacoConfig::default()
        };
        let c = candidate_subsets(&[1, 4, 6, 7], 2, &cfg, &mut seeded(0));
        for i in [1, 4, 6, 7] {
            assert!(c.contains(&vec![i]));
        }
        assert!(c.iter().all(|s| !s.is_empty() && s.len() <= 2));
        let exhaustive = AacoConfig {
            exhaustive_up_to: 8,
            ..AacoConfig::default()
        };
        assert_eq!(candidate_subsets(&[0, 1, 2], 3, &exhaustive, &mut seeded(0)).len(), 7);
        assert_eq!(candidate_subsets(&[0, 1, 2], 2, &exhaustive, &mut seeded(0)).len(), 6);
    }
}
