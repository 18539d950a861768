//! JAFA-MFRL: sparse-reward DQN over a set encoding, trained jointly with
//! its own classifier.

use nnkit::{Adam, Matrix, Mlp, MlpConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use super::dqn::{
    train_dqn, DqnConfig, DqnLearner, DqnPolicy, JointTraining, TargetKind, TrainingRecord,
};
use super::set_encoder::{SetEncoder, SetEncoderConfig};
use crate::datasets::{mask_with_probability, DatasetSplits};
use crate::env::{batch_matrices, AcquisitionState, RewardKind};
use crate::error::{AfaError, Result};
use crate::predictor::{train_masked_classifier, Classifier, MaskScheme, MaskedClassifier};
use crate::rng::{stream, SeededRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JafaConfig {
    pub encoder: SetEncoderConfig,
    pub head_hidden: Vec<usize>,
    pub classifier_hidden: Vec<usize>,
    pub pretrain: TrainConfig,
    pub dqn: DqnConfig,
}

impl JafaConfig {
    /// Full-scale settings: 128 agents, batches of 512, 10000 batches, with
    /// the image variant at 2 agents, batches of 64, 30000 batches and a
    /// `[128, 128]` classifier.
    pub fn preset(num_features: usize, image_like: bool) -> Self {
        let (agents, batch_size, num_batches, classifier_hidden) = if image_like {
            (2, 64, 30_000, vec![128, 128])
        } else {
            (128, 512, 10_000, vec![32, 32])
        };
        Self {
            encoder: SetEncoderConfig::default(),
            head_hidden: vec![32, 32],
            classifier_hidden,
            pretrain: TrainConfig::default(),
            dqn: DqnConfig {
                agents,
                batch_size,
                num_batches,
                learning_rate: 1e-3,
                classifier_learning_rate: 1e-3,
                tau: 0.005,
                epsilon_start: 1.0,
                epsilon_min: 0.05,
                replay_capacity: 1000 * num_features,
                target: TargetKind::LambdaReturn { lambda: 0.75 },
                joint: JointTraining::AfterDecay,
                eval_every: 500,
                eval_instances: 1000,
                grad_clip: 10.0,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JafaNet {
    pub encoder: SetEncoder,
    pub head: Mlp,
    pub classifier: MaskedClassifier,
}

pub(crate) fn clip_scale(slices: &[&[f64]], max_norm: f64) -> f64 {
    let norm = slices
        .iter()
        .flat_map(|s| s.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        max_norm / norm
    } else {
        1.0
    }
}

/// `½·mean (Q(s, a) − y)²` and its gradient with respect to `q`.
pub(crate) fn td_loss(q: &Matrix, actions: &[usize], targets: &[f64]) -> Result<(f64, Matrix)> {
    if actions.len() != q.rows() || targets.len() != q.rows() {
        return Err(AfaError::config("one action and target per state required"));
    }
    let n = q.rows() as f64;
    let mut grad = Matrix::zeros(q.rows(), q.cols());
    let mut loss = 0.0;
    for (k, (&a, &y)) in actions.iter().zip(targets).enumerate() {
        let diff = q[(k, a)] - y;
        loss += 0.5 * diff * diff;
        grad[(k, a)] = diff / n;
    }
    Ok((loss / n, grad))
}

impl JafaNet {
    pub fn new(
        num_features: usize,
        num_classes: usize,
        cfg: &JafaConfig,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let encoder = SetEncoder::new(num_features, &cfg.encoder, rng)?;
        let head = Mlp::new(
            MlpConfig::new(encoder.output_dim(), &cfg.head_hidden, num_features),
            rng,
        )?;
        let classifier =
            MaskedClassifier::new(num_features, &cfg.classifier_hidden, num_classes, 0.0, rng)?;
        Ok(Self {
            encoder,
            head,
            classifier,
        })
    }
}

impl DqnLearner for JafaNet {
    fn q_values(&self, states: &[AcquisitionState]) -> Result<Matrix> {
        Ok(self.head.forward(&self.encoder.encode(states)?)?)
    }

    fn fit_q(
        &mut self,
        states: &[AcquisitionState],
        actions: &[usize],
        targets: &[f64],
        opt: &mut Adam,
        grad_clip: f64,
    ) -> Result<f64> {
        let (emb, enc_cache) = self.encoder.forward_cached(states)?;
        let (q, head_cache) = self.head.forward_cached::<SeededRng>(&emb, None)?;
        let (loss, grad) = td_loss(&q, actions, targets)?;
        let (mut head_grads, grad_emb) = self.head.backward(&head_cache, &grad)?;
        let mut enc_grads = self.encoder.backward(&enc_cache, &grad_emb)?;
        let mut all = enc_grads.slices();
        all.extend(head_grads.slices());
        let scale = clip_scale(&all, grad_clip);
        if scale < 1.0 {
            enc_grads.scale(scale);
            head_grads.scale(scale);
        }
        let mut params = self.encoder.params_mut();
        params.extend(self.head.params_mut());
        let mut grads = enc_grads.slices();
        grads.extend(head_grads.slices());
        opt.step(params, grads)?;
        Ok(loss)
    }

    fn soft_update_from(&mut self, source: &Self, tau: f64) -> Result<()> {
        self.encoder.soft_update_from(&source.encoder, tau)?;
        self.head.soft_update_from(&source.head, tau)?;
        Ok(())
    }

    fn classifier(&self) -> &dyn Classifier {
        &self.classifier
    }

    fn fit_classifier(
        &mut self,
        states: &[AcquisitionState],
        labels: &[usize],
        opt: &mut Adam,
        rng: &mut SeededRng,
    ) -> Result<f64> {
        let (v, m) = batch_matrices(states);
        let weights = vec![1.0; self.classifier.num_classes()];
        self.classifier.train_step(&v, &m, labels, &weights, opt, rng)
    }
}

/// Pretrains a classifier on randomly masked training rows.
pub(crate) fn pretrain_classifier(
    model: MaskedClassifier,
    data: &DatasetSplits,
    cfg: &TrainConfig,
    rng: &mut SeededRng,
    seed: u64,
) -> Result<MaskedClassifier> {
    let val_mask = mask_with_probability(
        data.val.len(),
        data.num_features(),
        data.id().validation_mask_probability(),
        &mut stream(seed, "rl-classifier-val-mask"),
    );
    let (model, _) = train_masked_classifier(
        model,
        &data.train,
        &data.val,
        &MaskScheme::Random(data.id().masking()),
        &val_mask,
        cfg,
        rng,
    )?;
    Ok(model)
}

pub type JafaPolicy = DqnPolicy<JafaNet>;

pub fn train_jafa(
    data: &DatasetSplits,
    budget: usize,
    cfg: &JafaConfig,
    seed: u64,
) -> Result<(JafaPolicy, Vec<TrainingRecord>)> {
    let d = data.num_features();
    if budget > d {
        return Err(AfaError::BudgetTooLarge { budget, features: d });
    }
    let mut rng = stream(seed, "jafa");
    let mut net = JafaNet::new(d, data.num_classes(), cfg, &mut rng)?;
    net.classifier = pretrain_classifier(net.classifier, data, &cfg.pretrain, &mut rng, seed)?;
    let out = train_dqn(
        net,
        &data.train,
        &data.val,
        budget,
        RewardKind::SparseTerminalLoss,
        &cfg.dqn,
        &mut rng,
    )?;
    log::info!(
        "jafa on {} (b = {budget}): best validation accuracy {:.3}",
        data.manifest.name,
        out.best_val_accuracy
    );
    Ok((
        DqnPolicy {
            name: "jafa".into(),
            learner: out.learner,
        },
        out.history,
    ))
}
