//! ODIN: PPO on the dense negative-loss reward, scored by the shared
//! classifier. The model-based variant reveals PVAE-imputed values during
//! training rollouts instead of ground truth.

use std::sync::Arc;

use nnkit::{loss::softmax_row, Adam, AdamConfig, Matrix, Mlp, MlpConfig, MlpGrads};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dqn::TrainingRecord;
use crate::datasets::DatasetSplits;
use crate::env::{batch_encoding, batch_matrices, AcquisitionState, AfaEnv, RewardKind};
use crate::error::{AfaError, Result};
use crate::greedy::Pvae;
use crate::policy::{argmax_legal, terminal_accuracy, Policy};
use crate::predictor::Classifier;
use crate::rng::{stream, SeededRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    /// Episodes collected per update.
    pub episodes_per_update: usize,
    pub num_updates: usize,
    pub minibatch_size: usize,
    pub clip_ratio: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub gae_lambda: f64,
    pub grad_clip: f64,
    pub eval_every: usize,
    pub eval_instances: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32],
            learning_rate: 1e-3,
            episodes_per_update: 1024,
            num_updates: 1500,
            minibatch_size: 256,
            clip_ratio: 0.2,
            entropy_coef: 0.01,
            value_coef: 0.5,
            gae_lambda: 1.0,
            grad_clip: 1.0,
            eval_every: 25,
            eval_instances: 1000,
        }
    }
}

/// Policy and value heads over the `mask ‖ values` state encoding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpoAgent {
    pub policy: Mlp,
    pub value: Mlp,
}

/// Softmax over legal actions; illegal entries are exactly 0.
pub fn masked_softmax(logits: &[f64], state: &AcquisitionState) -> Vec<f64> {
    let legal: Vec<usize> = state.legal_actions();
    let sub: Vec<f64> = legal.iter().map(|&a| logits[a]).collect();
    let p = softmax_row(&sub);
    let mut out = vec![0.0; logits.len()];
    for (&a, v) in legal.iter().zip(p) {
        out[a] = v;
    }
    out
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

/// GAE with γ = 1: `δ_t = r_t + V_{t+1} − V_t`, `A_t = δ_t + λ·A_{t+1}`,
/// where `values` has one more entry than `rewards` (0 when terminal).
pub fn gae(rewards: &[f64], values: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if values.len() != rewards.len() + 1 {
        return Err(AfaError::config("GAE needs one more value than rewards"));
    }
    let mut adv = vec![0.0; rewards.len()];
    let mut next = 0.0;
    for t in (0..rewards.len()).rev() {
        let delta = rewards[t] + values[t + 1] - values[t];
        next = delta + lambda * next;
        adv[t] = next;
    }
    Ok(adv)
}

impl PpoAgent {
    pub fn new(num_features: usize, hidden: &[usize], rng: &mut SeededRng) -> Result<Self> {
        let mut policy = Mlp::new(MlpConfig::new(2 * num_features, hidden, num_features), rng)?;
        // Small output layer so the initial policy is near uniform.
        let last = policy.num_layers() - 1;
        policy.weight_mut(last).scale(0.01);
        Ok(Self {
            policy,
            value: Mlp::new(MlpConfig::new(2 * num_features, hidden, 1), rng)?,
        })
    }

    pub fn action_probs(&self, states: &[AcquisitionState]) -> Result<Vec<Vec<f64>>> {
        let logits = self.policy.forward(&batch_encoding(states))?;
        Ok(states
            .iter()
            .zip(logits.iter_rows())
            .map(|(s, l)| masked_softmax(l, s))
            .collect())
    }

    pub fn values(&self, states: &[AcquisitionState]) -> Result<Vec<f64>> {
        Ok(self.value.forward(&batch_encoding(states))?.into_vec())
    }
}

struct Sample {
    state: AcquisitionState,
    action: usize,
    log_prob: f64,
    advantage: f64,
    ret: f64,
}

struct PpoGrads {
    loss: f64,
    entropy: f64,
    policy: MlpGrads,
    value: MlpGrads,
}

/// Clipped-surrogate, entropy and value gradients for one minibatch.
fn ppo_grads(agent: &PpoAgent, batch: &[&Sample], cfg: &PpoConfig) -> Result<PpoGrads> {
    let states: Vec<AcquisitionState> = batch.iter().map(|s| s.state.clone()).collect();
    let x = batch_encoding(&states);
    let n = batch.len() as f64;
    let d = agent.policy.output_dim();
    let (logits, pcache) = agent.policy.forward_cached::<SeededRng>(&x, None)?;
    let (vals, vcache) = agent.value.forward_cached::<SeededRng>(&x, None)?;
    let mut g_logits = Matrix::zeros(batch.len(), d);
    let mut g_vals = Matrix::zeros(batch.len(), 1);
    let mut total_entropy = 0.0;
    let mut loss = 0.0;
    for (k, s) in batch.iter().enumerate() {
        let p = masked_softmax(logits.row(k), &s.state);
        let logp = p[s.action].max(f64::MIN_POSITIVE).ln();
        let ratio = (logp - s.log_prob).exp();
        let a = s.advantage;
        let clipped = ratio.clamp(1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio);
        let surrogate = (ratio * a).min(clipped * a);
        let h = entropy(&p);
        total_entropy += h;
        let v_err = vals[(k, 0)] - s.ret;
        loss += -surrogate - cfg.entropy_coef * h + cfg.value_coef * v_err * v_err;
        // The unclipped branch is active iff it is the minimum.
        let active = ratio * a <= clipped * a;
        let row = g_logits.row_mut(k);
        for j in s.state.legal_actions() {
            let dlogp = if j == s.action { 1.0 - p[j] } else { -p[j] };
            let mut g = 0.0;
            if active {
                g -= a * ratio * dlogp;
            }
            let lp = p[j].max(f64::MIN_POSITIVE).ln();
            g += cfg.entropy_coef * p[j] * (lp + h);
            row[j] = g / n;
        }
        g_vals[(k, 0)] = 2.0 * cfg.value_coef * v_err / n;
    }
    let (policy, _) = agent.policy.backward(&pcache, &g_logits)?;
    let (value, _) = agent.value.backward(&vcache, &g_vals)?;
    Ok(PpoGrads {
        loss: loss / n,
        entropy: total_entropy / n,
        policy,
        value,
    })
}

fn update(agent: &mut PpoAgent, batch: &[&Sample], cfg: &PpoConfig, opt: &mut Adam) -> Result<(f64, f64)> {
    let PpoGrads {
        loss,
        entropy,
        policy: mut pg,
        value: mut vg,
    } = ppo_grads(agent, batch, cfg)?;
    let mut all = pg.slices();
    all.extend(vg.slices());
    let norm = all.iter().flat_map(|s| s.iter()).map(|v| v * v).sum::<f64>().sqrt();
    if cfg.grad_clip > 0.0 && norm > cfg.grad_clip {
        pg.scale(cfg.grad_clip / norm);
        vg.scale(cfg.grad_clip / norm);
    }
    let mut params = agent.policy.params_mut();
    params.extend(agent.value.params_mut());
    let mut grads = pg.slices();
    grads.extend(vg.slices());
    opt.step(params, grads)?;
    Ok((loss, entropy))
}

/// Deterministic ODIN policy: argmax of the masked policy distribution.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OdinPolicy {
    pub name: String,
    pub agent: PpoAgent,
    /// Set when the mean policy entropy fell below 1e-3 nats during training.
    pub entropy_collapse_warning: bool,
}

impl Policy for OdinPolicy {
    fn name(&self) -> &str {
        &self.name
    }

    fn select(&self, state: &AcquisitionState, _rng: &mut SeededRng) -> Result<usize> {
        let logits = self.agent.policy.forward(&batch_encoding(std::slice::from_ref(state)))?;
        argmax_legal(logits.row(0), state)
    }
}

fn greedy_accuracy(
    agent: &PpoAgent,
    data: &crate::datasets::TabularDataset,
    budget: usize,
    classifier: &dyn Classifier,
) -> Result<f64> {
    let d = data.num_features();
    let mut states: Vec<AcquisitionState> = (0..data.len())
        .map(|i| AcquisitionState::new(i, d, budget))
        .collect::<Result<_>>()?;
    for _ in 0..budget {
        let logits = agent.policy.forward(&batch_encoding(&states))?;
        for (k, s) in states.iter_mut().enumerate() {
            let a = argmax_legal(logits.row(k), s)?;
            s.acquire(a, data.features[(s.instance, a)])?;
        }
    }
    terminal_accuracy(classifier, &states, &data.labels)
}

/// Trains ODIN-MFRL, or ODIN-MBRL when `pvae` is given.
pub fn train_odin(
    data: &DatasetSplits,
    budget: usize,
    classifier: Arc<dyn Classifier>,
    pvae: Option<Arc<Pvae>>,
    cfg: &PpoConfig,
    seed: u64,
) -> Result<(OdinPolicy, Vec<TrainingRecord>)> {
    let d = data.num_features();
    if budget > d {
        return Err(AfaError::BudgetTooLarge { budget, features: d });
    }
    if cfg.episodes_per_update == 0 || cfg.minibatch_size == 0 {
        return Err(AfaError::config("episode and minibatch counts must be >= 1"));
    }
    let model_based = pvae.is_some();
    let mut rng = stream(seed, if model_based { "odin-mbrl" } else { "odin-mfrl" });
    let train = &data.train;
    let val = if cfg.eval_instances > 0 && data.val.len() > cfg.eval_instances {
        data.val.subset(&(0..cfg.eval_instances).collect::<Vec<_>>())
    } else {
        data.val.clone()
    };
    let env = AfaEnv::new(&train.features, &train.labels, budget, RewardKind::DenseNegLoss)?;
    let mut agent = PpoAgent::new(d, &cfg.hidden, &mut rng)?;
    let mut opt = Adam::new(AdamConfig::with_lr(cfg.learning_rate));
    let mut history = Vec::new();
    let mut best: Option<(f64, PpoAgent)> = None;
    let mut collapse = false;
    let mut returns = Vec::new();

    for update_idx in 0..cfg.num_updates {
        let instances: Vec<usize> = (0..cfg.episodes_per_update)
            .map(|_| rng.random_range(0..train.len()))
            .collect();
        let mut states = env.reset(&instances)?;
        let e = states.len();
        let mut traj_states = vec![Vec::with_capacity(budget); e];
        let mut traj_actions = vec![Vec::with_capacity(budget); e];
        let mut traj_logp = vec![Vec::with_capacity(budget); e];
        let mut traj_rewards = vec![Vec::with_capacity(budget); e];
        for _ in 0..budget {
            let probs = agent.action_probs(&states)?;
            let mut actions = Vec::with_capacity(e);
            for (k, p) in probs.iter().enumerate() {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut a = None;
                for (j, &pj) in p.iter().enumerate() {
                    if pj > 0.0 {
                        acc += pj;
                        a = Some(j);
                        if u < acc {
                            break;
                        }
                    }
                }
                let a = a.ok_or(AfaError::NoLegalFeature)?;
                traj_states[k].push(states[k].clone());
                traj_actions[k].push(a);
                traj_logp[k].push(p[a].ln());
                actions.push(a);
            }
            let revealed = match &pvae {
                Some(model) => {
                    let (v, m) = batch_matrices(&states);
                    Some(model.impute_feature(&v, &m, &actions, &mut rng)?)
                }
                None => None,
            };
            let transitions = env.step(&states, &actions, revealed.as_deref(), classifier.as_ref(), &mut rng)?;
            for (k, t) in transitions.into_iter().enumerate() {
                traj_rewards[k].push(t.reward);
                states[k] = t.next_state;
            }
        }
        let mut samples = Vec::with_capacity(e * budget);
        for k in 0..e {
            let mut v = agent.values(&traj_states[k])?;
            v.push(0.0);
            let adv = gae(&traj_rewards[k], &v, cfg.gae_lambda)?;
            returns.push(traj_rewards[k].iter().sum::<f64>());
            for t in 0..budget {
                samples.push(Sample {
                    state: traj_states[k][t].clone(),
                    action: traj_actions[k][t],
                    log_prob: traj_logp[k][t],
                    advantage: adv[t],
                    ret: adv[t] + v[t],
                });
            }
        }
        let mean = samples.iter().map(|s| s.advantage).sum::<f64>() / samples.len() as f64;
        let var = samples.iter().map(|s| (s.advantage - mean).powi(2)).sum::<f64>() / samples.len() as f64;
        let sd = var.sqrt().max(1e-8);
        for s in &mut samples {
            s.advantage = (s.advantage - mean) / sd;
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng);
        let mut mean_entropy = 0.0;
        let mut chunks = 0;
        for chunk in order.chunks(cfg.minibatch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let (loss, h) = update(&mut agent, &batch, cfg, &mut opt)?;
            if !loss.is_finite() {
                return Err(AfaError::Divergence(format!("PPO loss {loss} at update {update_idx}")));
            }
            mean_entropy += h;
            chunks += 1;
        }
        mean_entropy /= chunks as f64;
        if mean_entropy < 1e-3 && budget < d && !collapse {
            log::warn!("odin policy entropy collapsed to {mean_entropy:.2e} at update {update_idx}");
            collapse = true;
        }
        let last = update_idx + 1 == cfg.num_updates;
        if cfg.eval_every > 0 && ((update_idx + 1) % cfg.eval_every == 0 || last) {
            let acc = greedy_accuracy(&agent, &val, budget, classifier.as_ref())?;
            let mean_return = returns.iter().sum::<f64>() / returns.len().max(1) as f64;
            returns.clear();
            log::debug!("odin update {}: val accuracy {acc:.3}, mean return {mean_return:.4}", update_idx + 1);
            history.push(TrainingRecord {
                batch: update_idx + 1,
                mean_return,
                val_accuracy: acc,
            });
            if best.as_ref().is_none_or(|(b, _)| acc >= *b) {
                best = Some((acc, agent.clone()));
            }
        }
    }
    let agent = best.map_or(agent, |(_, a)| a);
    let name = if model_based { "odin-mbrl" } else { "odin-mfrl" };
    Ok((
        OdinPolicy {
            name: name.into(),
            agent,
            entropy_collapse_warning: collapse,
        },
        history,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn illegal_actions_have_zero_probability() {
        let mut rng = seeded(0);
        let agent = PpoAgent::new(5, &[8], &mut rng).unwrap();
        let mut s = AcquisitionState::new(0, 5, 4).unwrap();
        s.acquire(1, 0.5).unwrap();
        s.acquire(3, -0.5).unwrap();
        let p = &agent.action_probs(&[s]).unwrap()[0];
        assert_eq!(p[1], 0.0);
        assert_eq!(p[3], 0.0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sampled_actions_never_repeat() {
        let mut rng = seeded(1);
        let agent = PpoAgent::new(4, &[8], &mut rng).unwrap();
        let mut s = AcquisitionState::new(0, 4, 4).unwrap();
        s.acquire(0, 1.0).unwrap();
        s.acquire(2, 1.0).unwrap();
        // Push the logits hard toward the acquired features.
        let mut a = agent.clone();
        let last = a.policy.num_layers() - 1;
        a.policy.bias_mut(last).copy_from_slice(&[50.0, 0.0, 50.0, 0.0]);
        let p = a.action_probs(std::slice::from_ref(&s)).unwrap().remove(0);
        for _ in 0..100_000 {
            let u: f64 = rng.random();
            let pick = if u < p[1] { 1 } else { 3 };
            assert!(!s.is_observed(pick));
        }
        assert_eq!(p[0] + p[2], 0.0);
    }

    #[test]
    fn gae_with_lambda_one_is_return_minus_baseline() {
        let r = [1.0, -2.0, 0.5];
        let v = [0.3, 0.1, -0.4, 0.0];
        let a = gae(&r, &v, 1.0).unwrap();
        for t in 0..3 {
            let g: f64 = r[t..].iter().sum();
            assert!((a[t] - (g - v[t])).abs() < 1e-12);
        }
        let a0 = gae(&r, &v, 0.0).unwrap();
        for t in 0..3 {
            assert!((a0[t] - (r[t] + v[t + 1] - v[t])).abs() < 1e-12);
        }
    }

    #[test]
    fn policy_gradient_matches_finite_differences() {
        let mut rng = seeded(2);
        let mut agent = PpoAgent::new(3, &[6], &mut rng).unwrap();
        for p in agent.policy.params_mut() {
            for v in p.iter_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
        let mut s = AcquisitionState::new(0, 3, 3).unwrap();
        s.acquire(1, 0.7).unwrap();
        let cfg = PpoConfig {
            clip_ratio: 10.0,
            grad_clip: 0.0,
            value_coef: 0.0,
            ..PpoConfig::default()
        };
        let sample = Sample {
            state: s.clone(),
            action: 2,
            log_prob: -0.9,
            advantage: 1.3,
            ret: 0.0,
        };
        let objective = |a: &PpoAgent| -> f64 {
            let logits = a.policy.forward(&batch_encoding(std::slice::from_ref(&s))).unwrap();
            let p = masked_softmax(logits.row(0), &s);
            let ratio = (p[2].ln() - sample.log_prob).exp();
            -ratio * sample.advantage - cfg.entropy_coef * entropy(&p)
        };
        let grads = ppo_grads(&agent, &[&sample], &cfg).unwrap().policy;
        let eps = 1e-6;
        for (li, g) in grads.slices().iter().enumerate() {
            for k in 0..g.len() {
                let analytic = g[k];
                let mut up = agent.clone();
                up.policy.params_mut()[li][k] += eps;
                let mut down = agent.clone();
                down.policy.params_mut()[li][k] -= eps;
                let numeric = (objective(&up) - objective(&down)) / (2.0 * eps);
                assert!(
                    (analytic - numeric).abs() <= 1e-4 * numeric.abs().max(1e-2),
                    "layer {li}[{k}]: {analytic} vs {numeric}"
                );
            }
        }
    }
}
