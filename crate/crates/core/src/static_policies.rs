//! Static baselines: one global feature order chosen from training data.
//!
//! PT-S ranks features by permutation importance under a predictor. CAE-S
//! learns a set of `b_max` features with a concrete selector layer and
//! acquires them in a random order.

use std::collections::BTreeMap;
use std::sync::Arc;

use nnkit::{loss::softmax_row, weighted_cross_entropy, Adam, AdamConfig, Matrix, Mlp, MlpConfig};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{mask_with_probability, DatasetSplits, TabularDataset};
use crate::env::AcquisitionState;
use crate::error::{AfaError, Result};
use crate::policy::Policy;
use crate::predictor::{train_masked_classifier, Classifier, MaskScheme, MaskedClassifier};
use crate::rng::{stream, SeededRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StaticMethod {
    PermutationImportance,
    ConcreteAutoencoder,
}

impl StaticMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            StaticMethod::PermutationImportance => "pt-s",
            StaticMethod::ConcreteAutoencoder => "cae-s",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRanking {
    /// Most important first.
    pub order: Vec<usize>,
    /// Importance per feature index.
    pub scores: Vec<f64>,
    pub method: StaticMethod,
}

pub const DEFAULT_PERMUTATION_REPEATS: usize = 5;

fn full_accuracy(predictor: &dyn Classifier, features: &Matrix, labels: &[usize]) -> Result<f64> {
    let mask = Matrix::filled(features.rows(), features.cols(), 1.0);
    let preds = predictor.predict_proba(features, &mask)?.argmax_rows();
    Ok(preds.iter().zip(labels).filter(|(p, y)| p == y).count() as f64 / labels.len().max(1) as f64)
}

/// Baseline validation accuracy minus the mean accuracy after replacing a
/// column with draws from the same training column, over `repeats` draws.
pub fn permutation_importance(
    predictor: &dyn Classifier,
    train: &TabularDataset,
    val: &TabularDataset,
    repeats: usize,
    seed: u64,
) -> Result<FeatureRanking> {
    if val.is_empty() || train.is_empty() {
        return Err(AfaError::Dataset("permutation importance needs train and validation rows".into()));
    }
    let repeats = repeats.max(1);
    let mut rng = stream(seed, "pt-s");
    let base = full_accuracy(predictor, &val.features, &val.labels)?;
    let d = val.num_features();
    let mut scores = Vec::with_capacity(d);
    for i in 0..d {
        let mut total = 0.0;
        for _ in 0..repeats {
            let mut x = val.features.clone();
            for r in 0..x.rows() {
                x[(r, i)] = train.features[(rng.random_range(0..train.len()), i)];
            }
            total += full_accuracy(predictor, &x, &val.labels)?;
        }
        scores.push(base - total / repeats as f64);
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    Ok(FeatureRanking {
        order,
        scores,
        method: StaticMethod::PermutationImportance,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaeConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub temperature_start: f64,
    pub temperature_end: f64,
    /// Budgets that get a retrained predictor.
    pub budgets: Vec<usize>,
    pub predictor: nnkit::TrainConfig,
    pub predictor_dropout: f64,
}

impl Default for CaeConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            learning_rate: 1e-3,
            batch_size: 128,
            epochs: 250,
            temperature_start: 10.0,
            temperature_end: 0.1,
            budgets: Vec::new(),
            predictor: nnkit::TrainConfig::default(),
            predictor_dropout: 0.1,
        }
    }
}

impl CaeConfig {
    /// Geometric interpolation from start to end over the epochs.
    pub fn temperature(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.temperature_end;
        }
        let frac = epoch as f64 / (self.epochs - 1) as f64;
        self.temperature_start * (self.temperature_end / self.temperature_start).powf(frac)
    }
}

/// Concrete selector: one logit row per head, mixing input features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcreteSelector {
    /// `heads × d`.
    pub logits: Matrix,
}

impl ConcreteSelector {
    /// Per-head argmax, with duplicates replaced by the head's best unused
    /// feature. The flag reports whether any replacement happened.
    pub fn selected(&self) -> (Vec<usize>, bool) {
        let mut used = vec![false; self.logits.cols()];
        let mut out = Vec::with_capacity(self.logits.rows());
        let mut duplicate = false;
        for h in 0..self.logits.rows() {
            let row = self.logits.row(h);
            let mut order: Vec<usize> = (0..row.len()).collect();
            order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            if used[order[0]] {
                duplicate = true;
            }
            let pick = *order.iter().find(|&&j| !used[j]).expect("heads <= features");
            used[pick] = true;
            out.push(pick);
        }
        (out, duplicate)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StaticSelection {
    pub features: Vec<usize>,
    /// Set when two heads converged to the same feature.
    pub duplicate_heads: bool,
    pub selector: ConcreteSelector,
    pub predictors: BTreeMap<usize, MaskedClassifier>,
}

fn gumbel(rng: &mut SeededRng) -> f64 {
    let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    -(-u.ln()).ln()
}

/// Trains the selector and a head predictor jointly, then one masked
/// predictor per configured budget on subsets of the selected features.
pub fn train_cae(data: &DatasetSplits, b_max: usize, cfg: &CaeConfig, seed: u64) -> Result<StaticSelection> {
    let d = data.num_features();
    if b_max == 0 || b_max > d {
        return Err(AfaError::BudgetTooLarge { budget: b_max, features: d });
    }
    let train = &data.train;
    let k = data.num_classes();
    let mut rng = stream(seed, "cae-s");
    let mut selector = ConcreteSelector {
        logits: Matrix::from_vec(b_max, d, (0..b_max * d).map(|_| rng.random_range(-0.01..0.01)).collect())?,
    };
    let mut head = Mlp::new(MlpConfig::new(b_max, &cfg.hidden, k), &mut rng)?;
    let mut head_opt = Adam::new(AdamConfig::with_lr(cfg.learning_rate));
    let mut sel_opt = Adam::new(AdamConfig::with_lr(cfg.learning_rate));
    let weights = vec![1.0; k];
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        let temp = cfg.temperature(epoch);
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let x = train.features.select_rows(chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let n = chunk.len();
            // w[r][h] is the relaxed one-hot of head h for row r.
            let mut w = Vec::with_capacity(n);
            let mut z = Matrix::zeros(n, b_max);
            for r in 0..n {
                let mut heads = Vec::with_capacity(b_max);
                for h in 0..b_max {
                    let noisy: Vec<f64> = selector
                        .logits
                        .row(h)
                        .iter()
                        .map(|&l| (l + gumbel(&mut rng)) / temp)
                        .collect();
                    let p = softmax_row(&noisy);
                    z[(r, h)] = p.iter().zip(x.row(r)).map(|(a, b)| a * b).sum();
                    heads.push(p);
                }
                w.push(heads);
            }
            let (logits, cache) = head.forward_cached(&z, Some(&mut rng))?;
            let (loss, grad) = weighted_cross_entropy(&logits, &y, &weights)?;
            if !loss.is_finite() {
                return Err(AfaError::Divergence(format!("CAE loss {loss} at epoch {epoch}")));
            }
            let (hg, gz) = head.backward(&cache, &grad)?;
            let mut gl = Matrix::zeros(b_max, d);
            for r in 0..n {
                for h in 0..b_max {
                    let p = &w[r][h];
                    let g = gz[(r, h)];
                    let xr = x.row(r);
                    let mean: f64 = p.iter().zip(xr).map(|(a, b)| a * b).sum();
                    let row = gl.row_mut(h);
                    for j in 0..d {
                        row[j] += g * p[j] * (xr[j] - mean) / temp;
                    }
                }
            }
            head_opt.step(head.params_mut(), hg.slices())?;
            sel_opt.step(vec![selector.logits.as_mut_slice()], vec![gl.as_slice()])?;
        }
    }
    let (features, duplicate_heads) = selector.selected();
    if duplicate_heads {
        log::warn!("cae-s: selection heads collapsed onto one feature; filled with next-best features");
    }
    let mut predictors = BTreeMap::new();
    let val_mask = {
        let mut m = mask_with_probability(data.val.len(), d, 0.0, &mut stream(seed, "cae-val"));
        for r in 0..m.rows() {
            for j in 0..d {
                if !features.contains(&j) {
                    m[(r, j)] = 0.0;
                }
            }
        }
        m
    };
    for &b in &cfg.budgets {
        if b == 0 || b > b_max {
            return Err(AfaError::BudgetTooLarge { budget: b, features: b_max });
        }
        let model = MaskedClassifier::new(d, &cfg.hidden, k, cfg.predictor_dropout, &mut rng)?;
        let (model, _) = train_masked_classifier(
            model,
            train,
            &data.val,
            &MaskScheme::SubsetOf {
                features: features.clone(),
                max_size: b,
            },
            &val_mask,
            &cfg.predictor,
            &mut rng,
        )?;
        predictors.insert(b, model);
    }
    Ok(StaticSelection {
        features,
        duplicate_heads,
        selector,
        predictors,
    })
}

/// PT-S: the top `b` of the ranking in rank order. CAE-S: a seeded random
/// permutation of the first `b` entries of a random ordering of the set.
pub fn static_eval_order(method: StaticMethod, features: &[usize], b: usize, seed: u64) -> Result<Vec<usize>> {
    if b > features.len() {
        return Err(AfaError::BudgetTooLarge {
            budget: b,
            features: features.len(),
        });
    }
    Ok(match method {
        StaticMethod::PermutationImportance => features[..b].to_vec(),
        StaticMethod::ConcreteAutoencoder => {
            let mut order = features.to_vec();
            order.shuffle(&mut stream(seed, "cae-s-order"));
            order.truncate(b);
            order
        }
    })
}

/// Acquires a fixed sequence for every instance.
pub struct StaticPolicy {
    pub name: String,
    pub order: Vec<usize>,
    pub classifier: Option<Arc<MaskedClassifier>>,
}

impl Policy for StaticPolicy {
    fn name(&self) -> &str {
        &self.name
    }

    fn select(&self, state: &AcquisitionState, _rng: &mut SeededRng) -> Result<usize> {
        self.order
            .iter()
            .copied()
            .find(|&i| !state.is_observed(i))
            .ok_or(AfaError::NoLegalFeature)
    }

    fn builtin_classifier(&self) -> Option<&dyn Classifier> {
        self.classifier.as_deref().map(|c| c as &dyn Classifier)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn pt_order_is_ranking_prefix() {
        assert_eq!(
            static_eval_order(StaticMethod::PermutationImportance, &[3, 1, 2], 2, 0).unwrap(),
            vec![3, 1]
        );
        assert!(static_eval_order(StaticMethod::PermutationImportance, &[3, 1, 2], 4, 0).is_err());
    }

    #[test]
    fn cae_order_is_a_permutation_and_varies_with_seed() {
        let set = [4, 9, 2, 7, 5];
        let mut distinct = std::collections::BTreeSet::new();
        for seed in 0..10 {
            let o = static_eval_order(StaticMethod::ConcreteAutoencoder, &set, 5, seed).unwrap();
            let mut sorted = o.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, vec![2, 4, 5, 7, 9]);
            distinct.insert(o);
        }
        assert!(distinct.len() > 1);
    }

    #[test]
    fn temperature_is_geometric() {
        let c = CaeConfig {
            epochs: 3,
            ..CaeConfig::default()
        };
        assert!((c.temperature(0) - 10.0).abs() < 1e-12);
        assert!((c.temperature(1) - 1.0).abs() < 1e-12);
        assert!((c.temperature(2) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn duplicate_heads_are_filled() {
        let sel = ConcreteSelector {
            logits: Matrix::from_rows(&[[5.0, 1.0, 0.0], [4.0, 0.0, 2.0]]).unwrap(),
        };
        assert_eq!(sel.selected(), (vec![0, 2], true));
    }

    #[test]
    fn static_policy_follows_order() {
        let p = StaticPolicy {
            name: "s".into(),
            order: vec![2, 0, 1],
            classifier: None,
        };
        let mut s = AcquisitionState::new(0, 3, 3).unwrap();
        let mut rng = seeded(0);
        let mut seen = vec![];
        while !s.is_done() {
            let a = p.select(&s, &mut rng).unwrap();
            seen.push(a);
            s.acquire(a, 0.0).unwrap();
        }
        assert_eq!(seen, vec![2, 0, 1]);
    }
}
