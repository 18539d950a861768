//! Greedy dynamic feature selection with a learned selector.
//!
//! The selector proposes a distribution over unobserved features; during
//! training the choice is relaxed to a concrete sample so the predictor's
//! loss after the acquisition can be backpropagated into the selector. The
//! mask itself advances with the hard argmax choice.

use std::sync::Arc;

use nnkit::{
    softmax_rows, weighted_cross_entropy, Adam, AdamConfig, EarlyStopping, Matrix, Mlp, MlpConfig, MlpGrads,
    StopDecision, TrainConfig,
};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{mask_observed, CmiScores};
use crate::datasets::{DatasetSplits, MaskingDistribution, TabularDataset};
use crate::env::AcquisitionState;
use crate::error::{AfaError, Result};
use crate::policy::Policy;
use crate::predictor::{class_weights, encode, train_masked_classifier, Classifier, MaskScheme, MaskedClassifier};
use crate::rng::{stream, SeededRng};

/// `stages` temperatures spaced geometrically from `start` to `end`.
pub fn temperature_schedule(start: f64, end: f64, stages: usize) -> Vec<f64> {
    if stages <= 1 {
        return vec![start];
    }
    let ratio = (end / start).ln() / (stages - 1) as f64;
    (0..stages).map(|k| start * (ratio * k as f64).exp()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GdfsConfig {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Acquisition steps unrolled per batch; `None` uses `min(d, 10)`.
    pub max_features: Option<usize>,
    pub temperatures: Vec<f64>,
    pub max_epochs_per_stage: usize,
    pub patience: usize,
    /// Predictor warm-up with random masks before joint training.
    pub pretrain: TrainConfig,
    pub masking: MaskingDistribution,
}

impl Default for GdfsConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            dropout: 0.3,
            learning_rate: 1e-3,
            batch_size: 128,
            max_features: None,
            temperatures: temperature_schedule(1.0, 0.1, 5),
            max_epochs_per_stage: 250,
            patience: 10,
            pretrain: TrainConfig::default(),
            masking: MaskingDistribution::TABULAR,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GdfsModel {
    pub selector: Mlp,
    pub predictor: MaskedClassifier,
    pub steps: usize,
    /// `(temperature, epochs run, best validation loss)` per stage.
    pub stages: Vec<(f64, usize, f64)>,
}

#[derive(Clone)]
struct Joint {
    selector: Mlp,
    predictor: MaskedClassifier,
}

impl GdfsModel {
    /// Selector logits with observed features at `−∞`.
    pub fn scores(&self, state: &AcquisitionState) -> Result<CmiScores> {
        let (v, m) = state.masked_input().to_matrices();
        let logits = self.selector.forward(&encode(&v, &m)?)?;
        Ok(mask_observed(logits.into_vec(), &state.mask))
    }
}

fn gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.random_range(1e-12..1.0);
    -(-u.ln()).ln()
}

/// Gradient with respect to the selector logits, given the gradient `g_in`
/// of the loss with respect to the predictor input `[x ⊙ m̃ ‖ m̃]`, where
/// `m̃ = m + (1 − m) ⊙ softmax((logits + noise) / T)`.
fn relaxed_logit_grad(g_in: &Matrix, x: &Matrix, m: &Matrix, soft: &Matrix, temperature: f64) -> Matrix {
    let (rows, d) = x.shape();
    let mut g_logits = Matrix::zeros(rows, d);
    for r in 0..rows {
        let gs: Vec<f64> = (0..d)
            .map(|j| (g_in[(r, j)] * x[(r, j)] + g_in[(r, d + j)]) * (1.0 - m[(r, j)]))
            .collect();
        let dot: f64 = (0..d).map(|j| soft[(r, j)] * gs[j]).sum();
        for j in 0..d {
            g_logits[(r, j)] = soft[(r, j)] * (gs[j] - dot) / temperature;
        }
    }
    g_logits
}

/// One joint update on a batch. Returns the mean predictor loss over steps.
#[allow(clippy::too_many_arguments)]
fn joint_step(
    model: &mut Joint,
    x: &Matrix,
    y: &[usize],
    weights: &[f64],
    steps: usize,
    temperature: f64,
    opts: (&mut Adam, &mut Adam),
    rng: &mut SeededRng,
) -> Result<f64> {
    let (rows, d) = x.shape();
    let mut m = Matrix::zeros(rows, d);
    let mut sel_acc = MlpGrads::zeros_like(&model.selector);
    let mut pred_acc = MlpGrads::zeros_like(&model.predictor.mlp);
    let mut total = 0.0;
    for _ in 0..steps {
        let (logits, sel_cache) = model.selector.forward_cached(&encode(x, &m)?, Some(&mut *rng))?;
        let mut soft = Matrix::zeros(rows, d);
        for r in 0..rows {
            let legal: Vec<usize> = (0..d).filter(|&j| m[(r, j)] == 0.0).collect();
            let z: Vec<f64> = legal
                .iter()
                .map(|&j| (logits[(r, j)] + gumbel(rng)) / temperature)
                .collect();
            let p = nnkit::softmax_row(&z);
            for (&j, pj) in legal.iter().zip(p) {
                soft[(r, j)] = pj;
            }
        }
        let m_soft = m.zip_map(&soft, |a, s| a + (1.0 - a) * s)?;
        let (plogits, pcache) = model
            .predictor
            .mlp
            .forward_cached(&encode(x, &m_soft)?, Some(&mut *rng))?;
        let (loss, g_out) = weighted_cross_entropy(&plogits, y, weights)?;
        if !loss.is_finite() {
            return Err(AfaError::Divergence(format!("GDFS loss {loss}")));
        }
        total += loss;
        let (pgrads, g_in) = model.predictor.mlp.backward(&pcache, &g_out)?;
        pred_acc.add_assign(&pgrads);
        let g_logits = relaxed_logit_grad(&g_in, x, &m, &soft, temperature);
        let (sgrads, _) = model.selector.backward(&sel_cache, &g_logits)?;
        sel_acc.add_assign(&sgrads);
        for r in 0..rows {
            let best = (0..d)
                .filter(|&j| m[(r, j)] == 0.0)
                .max_by(|&a, &b| logits[(r, a)].total_cmp(&logits[(r, b)]).then(b.cmp(&a)))
                .expect("steps <= d");
            m[(r, best)] = 1.0;
        }
    }
    let scale = 1.0 / steps as f64;
    sel_acc.scale(scale);
    pred_acc.scale(scale);
    let (sel_opt, pred_opt) = opts;
    sel_opt.step(model.selector.params_mut(), sel_acc.slices())?;
    pred_opt.step(model.predictor.mlp.params_mut(), pred_acc.slices())?;
    Ok(total * scale)
}

/// Hard-selection rollout; mean predictor loss over the unrolled steps.
fn validation_loss(model: &Joint, data: &TabularDataset, weights: &[f64], steps: usize) -> Result<f64> {
    let (rows, d) = data.features.shape();
    let mut m = Matrix::zeros(rows, d);
    let mut total = 0.0;
    for _ in 0..steps {
        let logits = model.selector.forward(&encode(&data.features, &m)?)?;
        for r in 0..rows {
            let best = (0..d)
                .filter(|&j| m[(r, j)] == 0.0)
                .max_by(|&a, &b| logits[(r, a)].total_cmp(&logits[(r, b)]).then(b.cmp(&a)))
                .expect("steps <= d");
            m[(r, best)] = 1.0;
        }
        let plogits = model.predictor.logits(&data.features, &m)?;
        total += weighted_cross_entropy(&plogits, &data.labels, weights)?.0;
    }
    Ok(total / steps as f64)
}

pub fn train_gdfs(data: &DatasetSplits, cfg: &GdfsConfig, seed: u64) -> Result<GdfsModel> {
    let d = data.num_features();
    let steps = cfg.max_features.unwrap_or(d.min(10)).min(d);
    if steps == 0 {
        return Err(AfaError::config("GDFS needs at least one acquisition step"));
    }
    let mut rng = stream(seed, "gdfs");
    let predictor = MaskedClassifier::new(d, &cfg.hidden, data.num_classes(), cfg.dropout, &mut rng)?;
    let val_mask = crate::datasets::sample_mask(data.val.len(), d, &cfg.masking, &mut stream(seed, "gdfs-val"));
    let (predictor, _) = train_masked_classifier(
        predictor,
        &data.train,
        &data.val,
        &MaskScheme::Random(cfg.masking),
        &val_mask,
        &cfg.pretrain,
        &mut rng,
    )?;
    let selector = Mlp::new(MlpConfig::new(2 * d, &cfg.hidden, d).with_dropout(cfg.dropout), &mut rng)?;
    let mut model = Joint { selector, predictor };
    let weights = class_weights(&cfg.pretrain, &data.train);
    let val = if data.val.is_empty() { &data.train } else { &data.val };
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut stages = Vec::new();
    for &temperature in &cfg.temperatures {
        let mut sel_opt = Adam::new(AdamConfig::with_lr(cfg.learning_rate));
        let mut pred_opt = Adam::new(AdamConfig::with_lr(cfg.learning_rate));
        let mut stopper = EarlyStopping::<Joint>::new(cfg.patience);
        stopper.observe(validation_loss(&model, val, &weights, steps)?, &model);
        let mut epochs = 0;
        for _ in 0..cfg.max_epochs_per_stage {
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.batch_size.max(1)) {
                let x = data.train.features.select_rows(chunk);
                let y: Vec<usize> = chunk.iter().map(|&i| data.train.labels[i]).collect();
                joint_step(
                    &mut model,
                    &x,
                    &y,
                    &weights,
                    steps,
                    temperature,
                    (&mut sel_opt, &mut pred_opt),
                    &mut rng,
                )?;
            }
            epochs += 1;
            let v = validation_loss(&model, val, &weights, steps)?;
            if stopper.observe(v, &model) == StopDecision::Stop {
                break;
            }
        }
        let best_loss = stopper.best_loss();
        model = stopper.into_best().expect("observed before training");
        log::debug!("GDFS stage T={temperature:.3}: {epochs} epochs, best val loss {best_loss:.4}");
        stages.push((temperature, epochs, best_loss));
    }
    Ok(GdfsModel {
        selector: model.selector,
        predictor: model.predictor,
        steps,
        stages,
    })
}

pub struct GdfsPolicy {
    pub model: Arc<GdfsModel>,
}

impl Policy for GdfsPolicy {
    fn name(&self) -> &str {
        "gdfs"
    }

    fn select(&self, state: &AcquisitionState, _rng: &mut SeededRng) -> Result<usize> {
        super::greedy_select(&self.model.scores(state)?)
    }

    fn builtin_classifier(&self) -> Option<&dyn Classifier> {
        Some(&self.model.predictor)
    }
}

/// Softmax of selector logits over unobserved features.
pub fn selection_distribution(model: &GdfsModel, state: &AcquisitionState) -> Result<Vec<f64>> {
    let scores = model.scores(state)?;
    let logits = Matrix::from_vec(1, scores.0.len(), scores.0)?;
    Ok(softmax_rows(&logits).into_vec())
}
