//! Discriminative CMI estimation with a value network.
//!
//! The value network predicts, for each unobserved feature, how much the
//! predictor's cross-entropy drops once that feature is revealed. Its output
//! is bounded: `sigmoid(raw) · H(p(y | x_S))`, since the information a feature
//! carries about `y` cannot exceed the current predictive entropy.

use std::sync::Arc;

use nnkit::{weighted_cross_entropy, Adam, AdamConfig, Matrix, Mlp, MlpConfig, MlpGrads, TrainConfig};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{entropy, mask_observed, per_sample_ce, CmiScores};
use crate::datasets::{DatasetSplits, MaskingDistribution, TabularDataset};
use crate::env::AcquisitionState;
use crate::error::{AfaError, Result};
use crate::policy::Policy;
use crate::predictor::{class_weights, encode, train_masked_classifier, Classifier, MaskScheme, MaskedClassifier};
use crate::rng::{stream, SeededRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimeConfig {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Acquisition steps unrolled per batch; `None` uses `min(d, 10)`.
    pub max_features: Option<usize>,
    pub eps_init: f64,
    pub eps_decay: f64,
    /// Epochs without validation improvement before ε decays.
    pub stall_epochs: usize,
    pub max_decays: usize,
    pub max_epochs: usize,
    pub pretrain: TrainConfig,
    pub masking: MaskingDistribution,
}

impl Default for DimeConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            dropout: 0.3,
            learning_rate: 1e-3,
            batch_size: 128,
            max_features: None,
            eps_init: 0.05,
            eps_decay: 0.2,
            stall_epochs: 5,
            max_decays: 10,
            max_epochs: 250,
            pretrain: TrainConfig::default(),
            masking: MaskingDistribution::TABULAR,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimeModel {
    pub value: Mlp,
    pub predictor: MaskedClassifier,
    pub steps: usize,
    pub epochs_run: usize,
    pub decays: usize,
    pub best_val_accuracy: f64,
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Bounded CMI estimates for a batch: `sigmoid(raw) · H(p)`.
fn bounded(raw: &Matrix, probs: &Matrix) -> Matrix {
    let mut out = raw.map(sigmoid);
    for r in 0..out.rows() {
        let h = entropy(probs.row(r));
        out.row_mut(r).iter_mut().for_each(|v| *v *= h);
    }
    out
}

impl DimeModel {
    /// Estimated CMI per feature, `−∞` for observed ones.
    pub fn scores(&self, state: &AcquisitionState) -> Result<CmiScores> {
        let (v, m) = state.masked_input().to_matrices();
        let raw = self.value.forward(&encode(&v, &m)?)?;
        let probs = self.predictor.predict_proba(&v, &m)?;
        Ok(mask_observed(bounded(&raw, &probs).into_vec(), &state.mask))
    }
}

#[derive(Clone)]
struct Joint {
    value: Mlp,
    predictor: MaskedClassifier,
}

fn pick(cmi: &Matrix, m: &Matrix, r: usize, eps: f64, rng: &mut SeededRng) -> usize {
    let legal: Vec<usize> = (0..m.cols()).filter(|&j| m[(r, j)] == 0.0).collect();
    if rng.random::<f64>() < eps {
        return *legal.choose(rng).expect("steps <= d");
    }
    let mut best = legal[0];
    for &j in &legal[1..] {
        if cmi[(r, j)] > cmi[(r, best)] {
            best = j;
        }
    }
    best
}

/// One joint update. Returns `(predictor loss, value MSE)` averaged over steps.
#[allow(clippy::too_many_arguments)]
fn joint_step(
    model: &mut Joint,
    x: &Matrix,
    y: &[usize],
    weights: &[f64],
    steps: usize,
    eps: f64,
    opts: (&mut Adam, &mut Adam),
    rng: &mut SeededRng,
) -> Result<(f64, f64)> {
    let (rows, d) = x.shape();
    let b = rows as f64;
    let mut m = Matrix::zeros(rows, d);
    let mut val_acc = MlpGrads::zeros_like(&model.value);
    let mut pred_acc = MlpGrads::zeros_like(&model.predictor.mlp);
    let (mut pred_total, mut val_total) = (0.0, 0.0);
    let mut probs_before = model.predictor.predict_proba(x, &m)?;
    for _ in 0..steps {
        let loss_before = per_sample_ce(&probs_before, y);
        let (raw, vcache) = model.value.forward_cached(&encode(x, &m)?, Some(&mut *rng))?;
        let cmi = bounded(&raw, &probs_before);
        let mut next = m.clone();
        let actions: Vec<usize> = (0..rows).map(|r| pick(&cmi, &m, r, eps, rng)).collect();
        for (r, &a) in actions.iter().enumerate() {
            next[(r, a)] = 1.0;
        }
        let (plogits, pcache) = model
            .predictor
            .mlp
            .forward_cached(&encode(x, &next)?, Some(&mut *rng))?;
        let (ploss, g_out) = weighted_cross_entropy(&plogits, y, weights)?;
        if !ploss.is_finite() {
            return Err(AfaError::Divergence(format!("DIME predictor loss {ploss}")));
        }
        pred_total += ploss;
        let (pgrads, _) = model.predictor.mlp.backward(&pcache, &g_out)?;
        pred_acc.add_assign(&pgrads);

        let probs_after = model.predictor.predict_proba(x, &next)?;
        let loss_after = per_sample_ce(&probs_after, y);
        let mut g_raw = Matrix::zeros(rows, d);
        for (r, &a) in actions.iter().enumerate() {
            let target = loss_before[r] - loss_after[r];
            let err = cmi[(r, a)] - target;
            val_total += err * err / b;
            let s = sigmoid(raw[(r, a)]);
            g_raw[(r, a)] = 2.0 * err * entropy(probs_before.row(r)) * s * (1.0 - s) / b;
        }
        let (vgrads, _) = model.value.backward(&vcache, &g_raw)?;
        val_acc.add_assign(&vgrads);
        m = next;
        probs_before = probs_after;
    }
    let scale = 1.0 / steps as f64;
    val_acc.scale(scale);
    pred_acc.scale(scale);
    let (val_opt, pred_opt) = opts;
    val_opt.step(model.value.params_mut(), val_acc.slices())?;
    pred_opt.step(model.predictor.mlp.params_mut(), pred_acc.slices())?;
    Ok((pred_total * scale, val_total * scale))
}

/// Greedy rollout on `data`: predictor accuracy averaged over acquisition steps.
fn validation_accuracy(model: &Joint, data: &TabularDataset, steps: usize) -> Result<f64> {
    let (rows, d) = data.features.shape();
    let x = &data.features;
    let mut m = Matrix::zeros(rows, d);
    let mut probs = model.predictor.predict_proba(x, &m)?;
    let mut rng = stream(0, "dime-val");
    let mut correct = 0usize;
    for _ in 0..steps {
        let cmi = bounded(&model.value.forward(&encode(x, &m)?)?, &probs);
        for r in 0..rows {
            let a = pick(&cmi, &m, r, 0.0, &mut rng);
            m[(r, a)] = 1.0;
        }
        probs = model.predictor.predict_proba(x, &m)?;
        correct += probs.argmax_rows().iter().zip(&data.labels).filter(|(p, y)| p == y).count();
    }
    Ok(correct as f64 / (rows * steps) as f64)
}

pub fn train_dime(data: &DatasetSplits, cfg: &DimeConfig, seed: u64) -> Result<DimeModel> {
    let d = data.num_features();
    let steps = cfg.max_features.unwrap_or(d.min(10)).min(d);
    if steps == 0 {
        return Err(AfaError::config("DIME needs at least one acquisition step"));
    }
    let mut rng = stream(seed, "dime");
    let predictor = MaskedClassifier::new(d, &cfg.hidden, data.num_classes(), cfg.dropout, &mut rng)?;
    let val_mask = crate::datasets::sample_mask(data.val.len(), d, &cfg.masking, &mut stream(seed, "dime-val"));
    let (predictor, _) = train_masked_classifier(
        predictor,
        &data.train,
        &data.val,
        &MaskScheme::Random(cfg.masking),
        &val_mask,
        &cfg.pretrain,
        &mut rng,
    )?;
    let value = Mlp::new(MlpConfig::new(2 * d, &cfg.hidden, d).with_dropout(cfg.dropout), &mut rng)?;
    let mut model = Joint { value, predictor };
    let weights = class_weights(&cfg.pretrain, &data.train);
    let val = if data.val.is_empty() { &data.train } else { &data.val };
    let mut val_opt = Adam::new(AdamConfig::with_lr(cfg.learning_rate));
    let mut pred_opt = Adam::new(AdamConfig::with_lr(cfg.learning_rate));
    let mut best = (validation_accuracy(&model, val, steps)?, model.clone());
    let mut eps = cfg.eps_init;
    let mut stall = 0;
    let mut decays = 0;
    let mut epochs = 0;
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    while epochs < cfg.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let x = data.train.features.select_rows(chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| data.train.labels[i]).collect();
            joint_step(&mut model, &x, &y, &weights, steps, eps, (&mut val_opt, &mut pred_opt), &mut rng)?;
        }
        epochs += 1;
        let v = validation_accuracy(&model, val, steps)?;
        if v > best.0 {
            best = (v, model.clone());
            stall = 0;
        } else {
            stall += 1;
            if stall >= cfg.stall_epochs {
                if decays == cfg.max_decays {
                    break;
                }
                eps *= cfg.eps_decay;
                decays += 1;
                stall = 0;
            }
        }
    }
    log::debug!("DIME: {epochs} epochs, {decays} ε decays, best val accuracy {:.4}", best.0);
    Ok(DimeModel {
        value: best.1.value,
        predictor: best.1.predictor,
        steps,
        epochs_run: epochs,
        decays,
        best_val_accuracy: best.0,
    })
}

pub struct DimePolicy {
    pub model: Arc<DimeModel>,
}

impl Policy for DimePolicy {
    fn name(&self) -> &str {
        "dime"
    }

    fn select(&self, state: &AcquisitionState, _rng: &mut SeededRng) -> Result<usize> {
        super::greedy_select(&self.model.scores(state)?)
    }

    fn builtin_classifier(&self) -> Option<&dyn Classifier> {
        Some(&self.model.predictor)
    }
}
