//! The hard-budget acquisition MDP.
//!
//! A state holds the features revealed so far for one instance. Each action
//! reveals one new feature; an episode ends after exactly `budget` actions and
//! there is no stop action. Batches of states advance in lockstep.

use std::io::{BufRead, Write};

use nnkit::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::{AfaError, Result};
use crate::predictor::{Classifier, MaskedInput};
use crate::rng::SeededRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionState {
    pub instance: usize,
    /// Acquired indices in acquisition order.
    pub observed: Vec<usize>,
    /// Revealed values, zero where unobserved.
    pub values: Vec<f64>,
    pub mask: Vec<f64>,
    pub budget: usize,
}

impl AcquisitionState {
    pub fn new(instance: usize, num_features: usize, budget: usize) -> Result<Self> {
        if budget > num_features {
            return Err(AfaError::BudgetTooLarge {
                budget,
                features: num_features,
            });
        }
        Ok(Self {
            instance,
            observed: Vec::with_capacity(budget),
            values: vec![0.0; num_features],
            mask: vec![0.0; num_features],
            budget,
        })
    }

    pub fn num_features(&self) -> usize {
        self.mask.len()
    }

    pub fn step(&self) -> usize {
        self.observed.len()
    }

    pub fn remaining(&self) -> usize {
        self.budget - self.observed.len()
    }

    pub fn is_done(&self) -> bool {
        self.observed.len() >= self.budget
    }

    pub fn is_observed(&self, i: usize) -> bool {
        self.mask[i] != 0.0
    }

    /// 1 for every feature that may still be acquired.
    pub fn action_mask(&self) -> Vec<f64> {
        self.mask.iter().map(|&m| 1.0 - m).collect()
    }

    pub fn legal_actions(&self) -> Vec<usize> {
        (0..self.num_features()).filter(|&i| !self.is_observed(i)).collect()
    }

    /// Reveals feature `i` with value `value`.
    pub fn acquire(&mut self, i: usize, value: f64) -> Result<()> {
        if self.is_done() {
            return Err(AfaError::EpisodeDone);
        }
        if i >= self.num_features() || self.is_observed(i) {
            return Err(AfaError::RepeatedAction(i));
        }
        self.observed.push(i);
        self.values[i] = value;
        self.mask[i] = 1.0;
        Ok(())
    }

    /// Agent-facing encoding `mask ‖ values`.
    pub fn encode(&self) -> Vec<f64> {
        let mut v = self.mask.clone();
        v.extend_from_slice(&self.values);
        v
    }

    pub fn masked_input(&self) -> MaskedInput {
        MaskedInput {
            values: self.values.clone(),
            mask: self.mask.clone(),
        }
    }
}

/// Stacks states into `(values, mask)` matrices.
pub fn batch_matrices(states: &[AcquisitionState]) -> (Matrix, Matrix) {
    let d = states.first().map_or(0, |s| s.num_features());
    let mut values = Vec::with_capacity(states.len() * d);
    let mut mask = Vec::with_capacity(states.len() * d);
    for s in states {
        values.extend_from_slice(&s.values);
        mask.extend_from_slice(&s.mask);
    }
    (
        Matrix::from_vec(states.len(), d, values).expect("equal widths"),
        Matrix::from_vec(states.len(), d, mask).expect("equal widths"),
    )
}

/// Stacks agent encodings `mask ‖ values`.
pub fn batch_encoding(states: &[AcquisitionState]) -> Matrix {
    let (values, mask) = batch_matrices(states);
    mask.hcat(&values).expect("same rows")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RewardKind {
    /// `−ℓ(f(x_S'), y)` on the final step, 0 before.
    SparseTerminalLoss,
    /// `−ℓ(f(x_S'), y)` on every step.
    DenseNegLoss,
    /// `‖Cert(x_S') − Cert(x_S)‖₂`; label-free.
    CertaintyDelta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: AcquisitionState,
    pub action: usize,
    pub reward: f64,
    pub next_state: AcquisitionState,
    pub done: bool,
}

/// Vectorized environment over a fixed set of instances.
pub struct AfaEnv<'a> {
    features: &'a Matrix,
    labels: &'a [usize],
    budget: usize,
    reward: RewardKind,
}

impl<'a> AfaEnv<'a> {
    pub fn new(features: &'a Matrix, labels: &'a [usize], budget: usize, reward: RewardKind) -> Result<Self> {
        if budget > features.cols() {
            return Err(AfaError::BudgetTooLarge {
                budget,
                features: features.cols(),
            });
        }
        if features.rows() != labels.len() {
            return Err(AfaError::Dataset("feature/label count mismatch".into()));
        }
        Ok(Self {
            features,
            labels,
            budget,
            reward,
        })
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn num_instances(&self) -> usize {
        self.labels.len()
    }

    pub fn reward_kind(&self) -> RewardKind {
        self.reward
    }

    pub fn label(&self, instance: usize) -> usize {
        self.labels[instance]
    }

    pub fn value(&self, instance: usize, feature: usize) -> f64 {
        self.features[(instance, feature)]
    }

    pub fn reset(&self, instances: &[usize]) -> Result<Vec<AcquisitionState>> {
        instances
            .iter()
            .map(|&i| AcquisitionState::new(i, self.num_features(), self.budget))
            .collect()
    }

    /// Advances every state by its action. `revealed` overrides the true
    /// feature values (model-based rollouts); `None` reveals ground truth.
    pub fn step(
        &self,
        states: &[AcquisitionState],
        actions: &[usize],
        revealed: Option<&[f64]>,
        classifier: &dyn Classifier,
        rng: &mut SeededRng,
    ) -> Result<Vec<Transition>> {
        if actions.len() != states.len() {
            return Err(AfaError::config("one action per state required"));
        }
        let mut next = Vec::with_capacity(states.len());
        for (k, (s, &a)) in states.iter().zip(actions).enumerate() {
            let mut n = s.clone();
            let value = revealed.map_or_else(|| self.value(s.instance, a), |r| r[k]);
            n.acquire(a, value)?;
            next.push(n);
        }
        let rewards = self.rewards(states, &next, classifier, rng)?;
        Ok(states
            .iter()
            .zip(next)
            .zip(actions)
            .zip(rewards)
            .map(|(((s, n), &a), r)| Transition {
                done: n.is_done(),
                state: s.clone(),
                action: a,
                reward: r,
                next_state: n,
            })
            .collect())
    }

    fn rewards(
        &self,
        before: &[AcquisitionState],
        after: &[AcquisitionState],
        classifier: &dyn Classifier,
        rng: &mut SeededRng,
    ) -> Result<Vec<f64>> {
        match self.reward {
            RewardKind::DenseNegLoss => self.neg_losses(after, classifier),
            RewardKind::SparseTerminalLoss => {
                let losses = self.neg_losses(after, classifier)?;
                Ok(losses
                    .into_iter()
                    .zip(after)
                    .map(|(l, s)| if s.is_done() { l } else { 0.0 })
                    .collect())
            }
            RewardKind::CertaintyDelta => {
                let (v0, m0) = batch_matrices(before);
                let (v1, m1) = batch_matrices(after);
                let c0 = classifier.certainty(&v0, &m0, rng)?;
                let c1 = classifier.certainty(&v1, &m1, rng)?;
                Ok(c0.iter_rows().zip(c1.iter_rows()).map(|(a, b)| l2_distance(a, b)).collect())
            }
        }
    }

    fn neg_losses(&self, states: &[AcquisitionState], classifier: &dyn Classifier) -> Result<Vec<f64>> {
        let (v, m) = batch_matrices(states);
        let probs = classifier.predict_proba(&v, &m)?;
        Ok(states
            .iter()
            .zip(probs.iter_rows())
            .map(|(s, p)| p[self.labels[s.instance]].max(f64::MIN_POSITIVE).ln())
            .collect())
    }
}

pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Audit record of one episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTranscript {
    pub instance: usize,
    pub actions: Vec<usize>,
    #[serde(default)]
    pub rewards: Vec<f64>,
}

impl EpisodeTranscript {
    pub fn has_distinct_actions(&self, budget: usize) -> bool {
        let mut seen = self.actions.clone();
        seen.sort_unstable();
        seen.dedup();
        self.actions.len() == budget && seen.len() == budget
    }
}

pub fn write_transcripts<W: Write>(mut w: W, transcripts: &[EpisodeTranscript]) -> Result<()> {
    for t in transcripts {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_transcripts<R: BufRead>(r: R) -> Result<Vec<EpisodeTranscript>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
