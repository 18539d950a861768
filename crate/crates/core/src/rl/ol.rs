//! OL-MFRL: DQN on the label-free certainty reward with a coupled PQ
//! network. The P network's class probabilities are part of the Q input.

use nnkit::{Adam, Matrix, Mlp, MlpConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use super::dqn::{
    train_dqn, DqnConfig, DqnLearner, DqnPolicy, JointTraining, TargetKind, TrainingRecord,
};
use super::jafa::{clip_scale, pretrain_classifier, td_loss};
use crate::datasets::DatasetSplits;
use crate::env::{batch_matrices, AcquisitionState, RewardKind};
use crate::error::{AfaError, Result};
use crate::predictor::{Classifier, MaskedClassifier};
use crate::rng::{stream, SeededRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OlConfig {
    pub p_hidden: Vec<usize>,
    pub q_hidden: Vec<usize>,
    pub dropout: f64,
    pub pretrain: TrainConfig,
    pub dqn: DqnConfig,
}

impl OlConfig {
    pub fn preset(num_features: usize, image_like: bool) -> Self {
        Self {
            p_hidden: vec![64, 32, 16],
            q_hidden: vec![64, 32, 16],
            dropout: 0.1,
            pretrain: TrainConfig::default(),
            dqn: DqnConfig {
                agents: 32,
                batch_size: 128,
                num_batches: 10_000,
                learning_rate: 1e-3,
                classifier_learning_rate: 1e-3,
                tau: 0.005,
                epsilon_start: 1.0,
                epsilon_min: 0.05,
                replay_capacity: if image_like { 30_000 } else { 1000 * num_features },
                target: TargetKind::OneStep,
                joint: JointTraining::Always,
                eval_every: 500,
                eval_instances: 1000,
                grad_clip: 10.0,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OlNet {
    pub p: MaskedClassifier,
    pub q: Mlp,
}

impl OlNet {
    pub fn new(num_features: usize, num_classes: usize, cfg: &OlConfig, rng: &mut SeededRng) -> Result<Self> {
        let p = MaskedClassifier::new(num_features, &cfg.p_hidden, num_classes, cfg.dropout, rng)?;
        let q = Mlp::new(
            MlpConfig::new(2 * num_features + num_classes, &cfg.q_hidden, num_features),
            rng,
        )?;
        Ok(Self { p, q })
    }

    /// `[mask ‖ values ⊙ mask ‖ P(y | x_S)]`.
    fn q_input(&self, states: &[AcquisitionState]) -> Result<Matrix> {
        let (v, m) = batch_matrices(states);
        let probs = self.p.predict_proba(&v, &m)?;
        Ok(m.hcat(&v.hadamard(&m)?)?.hcat(&probs)?)
    }
}

impl DqnLearner for OlNet {
    fn q_values(&self, states: &[AcquisitionState]) -> Result<Matrix> {
        Ok(self.q.forward(&self.q_input(states)?)?)
    }

    fn fit_q(
        &mut self,
        states: &[AcquisitionState],
        actions: &[usize],
        targets: &[f64],
        opt: &mut Adam,
        grad_clip: f64,
    ) -> Result<f64> {
        let input = self.q_input(states)?;
        let (q, cache) = self.q.forward_cached::<SeededRng>(&input, None)?;
        let (loss, grad) = td_loss(&q, actions, targets)?;
        let (mut grads, _) = self.q.backward(&cache, &grad)?;
        let scale = clip_scale(&grads.slices(), grad_clip);
        if scale < 1.0 {
            grads.scale(scale);
        }
        opt.step(self.q.params_mut(), grads.slices())?;
        Ok(loss)
    }

    fn soft_update_from(&mut self, source: &Self, tau: f64) -> Result<()> {
        self.q.soft_update_from(&source.q, tau)?;
        self.p.mlp.soft_update_from(&source.p.mlp, tau)?;
        Ok(())
    }

    fn classifier(&self) -> &dyn Classifier {
        &self.p
    }

    fn fit_classifier(
        &mut self,
        states: &[AcquisitionState],
        labels: &[usize],
        opt: &mut Adam,
        rng: &mut SeededRng,
    ) -> Result<f64> {
        let (v, m) = batch_matrices(states);
        let weights = vec![1.0; self.p.num_classes()];
        self.p.train_step(&v, &m, labels, &weights, opt, rng)
    }
}

pub type OlPolicy = DqnPolicy<OlNet>;

pub fn train_ol(
    data: &DatasetSplits,
    budget: usize,
    cfg: &OlConfig,
    seed: u64,
) -> Result<(OlPolicy, Vec<TrainingRecord>)> {
    let d = data.num_features();
    if budget > d {
        return Err(AfaError::BudgetTooLarge { budget, features: d });
    }
    let mut rng = stream(seed, "ol");
    let mut net = OlNet::new(d, data.num_classes(), cfg, &mut rng)?;
    net.p = pretrain_classifier(net.p, data, &cfg.pretrain, &mut rng, seed)?;
    let out = train_dqn(
        net,
        &data.train,
        &data.val,
        budget,
        RewardKind::CertaintyDelta,
        &cfg.dqn,
        &mut rng,
    )?;
    log::info!(
        "ol on {} (b = {budget}): best validation accuracy {:.3}",
        data.manifest.name,
        out.best_val_accuracy
    );
    Ok((
        DqnPolicy {
            name: "ol".into(),
            learner: out.learner,
        },
        out.history,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn q_input_layout() {
        let mut rng = seeded(0);
        let net = OlNet::new(3, 2, &OlConfig::preset(3, false), &mut rng).unwrap();
        let mut s = AcquisitionState::new(0, 3, 2).unwrap();
        s.acquire(1, 4.0).unwrap();
        let x = net.q_input(&[s]).unwrap();
        assert_eq!(x.cols(), 8);
        assert_eq!(&x.row(0)[..6], &[0.0, 1.0, 0.0, 0.0, 4.0, 0.0]);
        assert!((x.row(0)[6] + x.row(0)[7] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn replay_capacity_preset() {
        assert_eq!(OlConfig::preset(7, false).dqn.replay_capacity, 7000);
        assert_eq!(OlConfig::preset(784, true).dqn.replay_capacity, 30_000);
    }
}
