//! Deep Q-learning on the acquisition MDP, shared by JAFA and OL.

use std::io::Write;

use nnkit::{Adam, AdamConfig, Matrix};
use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::replay::ReplayBuffer;
use super::td::lambda_return;
use crate::datasets::TabularDataset;
use crate::env::{AcquisitionState, AfaEnv, RewardKind, Transition};
use crate::error::{AfaError, Result};
use crate::policy::{argmax_legal, terminal_accuracy, Policy};
use crate::predictor::Classifier;
use crate::rng::SeededRng;

/// How regression targets for `Q(s, a)` are formed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum TargetKind {
    /// λ-return over the finished episode, bootstrapped from the target
    /// network when the episode is stored.
    LambdaReturn { lambda: f64 },
    /// `r + max_a' Q_target(s', a')`, recomputed at sampling time.
    OneStep,
}

/// When the learner's classifier is updated alongside Q.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum JointTraining {
    Never,
    /// Once ε has reached its floor.
    AfterDecay,
    Always,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DqnConfig {
    /// Episodes run in parallel.
    pub agents: usize,
    pub batch_size: usize,
    pub num_batches: usize,
    pub learning_rate: f64,
    pub classifier_learning_rate: f64,
    pub tau: f64,
    pub epsilon_start: f64,
    pub epsilon_min: f64,
    pub replay_capacity: usize,
    pub target: TargetKind,
    pub joint: JointTraining,
    pub eval_every: usize,
    /// Validation instances used per evaluation; 0 means all.
    pub eval_instances: usize,
    pub grad_clip: f64,
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.agents == 0 || self.batch_size == 0 || self.num_batches == 0 {
            return Err(AfaError::config("agents, batch size and batch count must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.epsilon_min) || self.epsilon_min > self.epsilon_start {
            return Err(AfaError::config("need 0 <= epsilon_min <= epsilon_start <= 1"));
        }
        if self.epsilon_start > 1.0 {
            return Err(AfaError::config("epsilon_start above 1"));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(AfaError::config("tau outside [0, 1]"));
        }
        Ok(())
    }

    /// Linear decay from `epsilon_start` to `epsilon_min` over the first half
    /// of training, constant afterwards.
    pub fn epsilon_at(&self, batch: usize) -> f64 {
        let half = (self.num_batches / 2).max(1);
        if batch >= half {
            return self.epsilon_min;
        }
        let frac = batch as f64 / half as f64;
        self.epsilon_start + (self.epsilon_min - self.epsilon_start) * frac
    }
}

/// A Q-network plus the classifier that scores its acquisitions.
pub trait DqnLearner: Clone + Send + Sync {
    fn q_values(&self, states: &[AcquisitionState]) -> Result<Matrix>;

    /// One optimizer step on `½·mean (Q(s, a) − target)²`. Returns the loss.
    fn fit_q(
        &mut self,
        states: &[AcquisitionState],
        actions: &[usize],
        targets: &[f64],
        opt: &mut Adam,
        grad_clip: f64,
    ) -> Result<f64>;

    /// Polyak step of the Q parameters toward `source`.
    fn soft_update_from(&mut self, source: &Self, tau: f64) -> Result<()>;

    fn classifier(&self) -> &dyn Classifier;

    fn fit_classifier(
        &mut self,
        states: &[AcquisitionState],
        labels: &[usize],
        opt: &mut Adam,
        rng: &mut SeededRng,
    ) -> Result<f64>;
}

/// One row of the training curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub batch: usize,
    pub mean_return: f64,
    pub val_accuracy: f64,
}

pub fn write_training_curve<W: Write>(w: W, records: &[TrainingRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Clone, Debug)]
struct ReplayItem {
    transition: Transition,
    label: usize,
    lambda_target: f64,
}

pub struct DqnOutcome<L> {
    pub learner: L,
    pub history: Vec<TrainingRecord>,
    pub best_val_accuracy: f64,
}

/// Max legal Q per state; 0 for finished states.
fn bootstrap(target: &Matrix, states: &[AcquisitionState]) -> Vec<f64> {
    states
        .iter()
        .zip(target.iter_rows())
        .map(|(s, q)| {
            s.legal_actions()
                .into_iter()
                .map(|a| q[a])
                .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))
                .filter(|_| !s.is_done())
                .unwrap_or(0.0)
        })
        .collect()
}

/// Batched greedy rollout of `learner` on every row of `data`.
pub fn greedy_states<L: DqnLearner>(
    learner: &L,
    data: &TabularDataset,
    budget: usize,
) -> Result<Vec<AcquisitionState>> {
    let d = data.num_features();
    let mut states: Vec<AcquisitionState> = (0..data.len())
        .map(|i| AcquisitionState::new(i, d, budget))
        .collect::<Result<_>>()?;
    for _ in 0..budget {
        let q = learner.q_values(&states)?;
        for (k, s) in states.iter_mut().enumerate() {
            let a = argmax_legal(q.row(k), s)?;
            s.acquire(a, data.features[(s.instance, a)])?;
        }
    }
    Ok(states)
}

fn val_accuracy<L: DqnLearner>(learner: &L, val: &TabularDataset, budget: usize) -> Result<f64> {
    let states = greedy_states(learner, val, budget)?;
    terminal_accuracy(learner.classifier(), &states, &val.labels)
}

/// Runs ε-greedy DQN from `online`, returning the learner with the best
/// validation accuracy seen at an evaluation point.
pub fn train_dqn<L: DqnLearner>(
    mut online: L,
    train: &TabularDataset,
    val: &TabularDataset,
    budget: usize,
    reward: RewardKind,
    cfg: &DqnConfig,
    rng: &mut SeededRng,
) -> Result<DqnOutcome<L>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(AfaError::Dataset("empty training split".into()));
    }
    let env = AfaEnv::new(&train.features, &train.labels, budget, reward)?;
    let val = if cfg.eval_instances > 0 && val.len() > cfg.eval_instances {
        val.subset(&(0..cfg.eval_instances).collect::<Vec<_>>())
    } else {
        val.clone()
    };
    let mut target = online.clone();
    let mut replay: ReplayBuffer<ReplayItem> = ReplayBuffer::new(cfg.replay_capacity)?;
    let mut q_opt = Adam::new(AdamConfig::with_lr(cfg.learning_rate));
    let mut c_opt = Adam::new(AdamConfig::with_lr(cfg.classifier_learning_rate));
    let n = train.len();
    let start: Vec<usize> = (0..cfg.agents).map(|_| rng.random_range(0..n)).collect();
    let mut states = env.reset(&start)?;
    let mut episodes: Vec<Vec<Transition>> = vec![Vec::new(); cfg.agents];
    let mut returns = Vec::new();
    let mut history = Vec::new();
    let mut best: Option<(f64, L)> = None;

    for batch in 0..cfg.num_batches {
        let eps = cfg.epsilon_at(batch);
        let q = online.q_values(&states)?;
        let mut actions = Vec::with_capacity(states.len());
        for (k, s) in states.iter().enumerate() {
            let a = if rng.random::<f64>() < eps {
                *s.legal_actions().choose(rng).ok_or(AfaError::NoLegalFeature)?
            } else {
                argmax_legal(q.row(k), s)?
            };
            actions.push(a);
        }
        let transitions = env.step(&states, &actions, None, online.classifier(), rng)?;
        for (k, t) in transitions.into_iter().enumerate() {
            let done = t.done;
            states[k] = t.next_state.clone();
            episodes[k].push(t);
            if !done {
                continue;
            }
            let episode = std::mem::take(&mut episodes[k]);
            let label = env.label(episode[0].state.instance);
            returns.push(episode.iter().map(|t| t.reward).sum::<f64>());
            let targets = match cfg.target {
                TargetKind::LambdaReturn { lambda } => {
                    let next: Vec<AcquisitionState> =
                        episode.iter().map(|t| t.next_state.clone()).collect();
                    let values = bootstrap(&target.q_values(&next)?, &next);
                    let rewards: Vec<f64> = episode.iter().map(|t| t.reward).collect();
                    lambda_return(&rewards, &values, lambda)?
                }
                TargetKind::OneStep => vec![0.0; episode.len()],
            };
            for (transition, lambda_target) in episode.into_iter().zip(targets) {
                replay.push(ReplayItem {
                    transition,
                    label,
                    lambda_target,
                });
            }
            states[k] = env.reset(&[rng.random_range(0..n)])?.remove(0);
        }

        if replay.len() >= cfg.batch_size {
            let items = replay.sample(cfg.batch_size, rng)?;
            let s: Vec<AcquisitionState> = items.iter().map(|i| i.transition.state.clone()).collect();
            let a: Vec<usize> = items.iter().map(|i| i.transition.action).collect();
            let y = match cfg.target {
                TargetKind::LambdaReturn { .. } => items.iter().map(|i| i.lambda_target).collect(),
                TargetKind::OneStep => {
                    let next: Vec<AcquisitionState> =
                        items.iter().map(|i| i.transition.next_state.clone()).collect();
                    let values = bootstrap(&target.q_values(&next)?, &next);
                    items
                        .iter()
                        .zip(values)
                        .map(|(i, v)| i.transition.reward + v)
                        .collect::<Vec<f64>>()
                }
            };
            let loss = online.fit_q(&s, &a, &y, &mut q_opt, cfg.grad_clip)?;
            if !loss.is_finite() {
                return Err(AfaError::Divergence(format!("Q loss {loss} at batch {batch}")));
            }
            target.soft_update_from(&online, cfg.tau)?;
            let joint = match cfg.joint {
                JointTraining::Never => false,
                JointTraining::Always => true,
                JointTraining::AfterDecay => eps <= cfg.epsilon_min,
            };
            if joint {
                let next: Vec<AcquisitionState> =
                    items.iter().map(|i| i.transition.next_state.clone()).collect();
                let labels: Vec<usize> = items.iter().map(|i| i.label).collect();
                online.fit_classifier(&next, &labels, &mut c_opt, rng)?;
            }
        }

        let last = batch + 1 == cfg.num_batches;
        if cfg.eval_every > 0 && ((batch + 1) % cfg.eval_every == 0 || last) {
            let acc = val_accuracy(&online, &val, budget)?;
            let mean_return = if returns.is_empty() {
                f64::NAN
            } else {
                returns.iter().sum::<f64>() / returns.len() as f64
            };
            returns.clear();
            log::debug!("dqn batch {}: val accuracy {acc:.3}, mean return {mean_return:.4}", batch + 1);
            history.push(TrainingRecord {
                batch: batch + 1,
                mean_return,
                val_accuracy: acc,
            });
            if best.as_ref().is_none_or(|(b, _)| acc >= *b) {
                best = Some((acc, online.clone()));
            }
        }
    }
    let (best_val_accuracy, learner) = match best {
        Some((acc, l)) => (acc, l),
        None => (val_accuracy(&online, &val, budget)?, online),
    };
    Ok(DqnOutcome {
        learner,
        history,
        best_val_accuracy,
    })
}

/// Greedy policy over a trained learner's Q-values.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DqnPolicy<L> {
    pub name: String,
    pub learner: L,
}

impl<L: DqnLearner> Policy for DqnPolicy<L> {
    fn name(&self) -> &str {
        &self.name
    }

    fn select(&self, state: &AcquisitionState, _rng: &mut SeededRng) -> Result<usize> {
        let q = self.learner.q_values(std::slice::from_ref(state))?;
        argmax_legal(q.row(0), state)
    }

    fn builtin_classifier(&self) -> Option<&dyn Classifier> {
        Some(self.learner.classifier())
    }
}
