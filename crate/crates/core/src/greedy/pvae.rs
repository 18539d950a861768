//! Partial variational autoencoder.
//!
//! The encoder reads `[x ⊙ m ‖ m]` and returns a diagonal Gaussian over the
//! latent code; the decoder maps a code to a diagonal Gaussian per feature.
//! Training maximizes the likelihood of the observed entries minus a scaled
//! KL term, so a fully masked input encodes to the prior and decoding prior
//! samples generates whole instances.

use std::f64::consts::PI;

use nnkit::{Adam, AdamConfig, EarlyStopping, Matrix, Mlp, MlpConfig, MlpGrads, StopDecision};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datasets::{sample_mask, DatasetSplits, MaskingDistribution};
use crate::error::{AfaError, Result};
use crate::predictor::encode;
use crate::rng::{stream, SeededRng};

const LOGVAR_MIN: f64 = -10.0;
const LOGVAR_MAX: f64 = 8.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PvaeConfig {
    /// Latent width; `None` picks 16 up to 50 features and 32 above.
    pub latent_dim: Option<usize>,
    pub hidden: Vec<usize>,
    pub beta: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for PvaeConfig {
    fn default() -> Self {
        Self {
            latent_dim: None,
            hidden: vec![128, 128],
            beta: 0.1,
            learning_rate: 1e-3,
            batch_size: 128,
            max_epochs: 250,
            patience: 10,
        }
    }
}

impl PvaeConfig {
    /// KL scale 0.01 on AFAContext, 0.1 elsewhere.
    pub fn for_dataset(id: crate::datasets::DatasetId) -> Self {
        let beta = if id == crate::datasets::DatasetId::AfaContext {
            0.01
        } else {
            0.1
        };
        Self {
            beta,
            ..Self::default()
        }
    }

    fn latent_for(&self, d: usize) -> usize {
        self.latent_dim.unwrap_or(if d <= 50 { 16 } else { 32 })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pvae {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub latent_dim: usize,
    pub beta: f64,
    /// Set when the validation KL stayed below 1e-3 nats for the last epochs.
    pub posterior_collapse_warning: bool,
    pub history: Vec<PvaeEpoch>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PvaeEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    /// Mean per-row `log p(x_O | z) − β·KL` on validation.
    pub val_elbo: f64,
    pub val_kl: f64,
}

/// Per-batch loss terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PvaeLoss {
    pub reconstruction: f64,
    pub kl: f64,
    pub total: f64,
}

fn clamp_logvar(v: f64) -> f64 {
    v.clamp(LOGVAR_MIN, LOGVAR_MAX)
}

impl Pvae {
    pub fn new(d: usize, cfg: &PvaeConfig, rng: &mut SeededRng) -> Result<Self> {
        let z = cfg.latent_for(d);
        Ok(Self {
            encoder: Mlp::new(MlpConfig::new(2 * d, &cfg.hidden, 2 * z), rng)?,
            decoder: Mlp::new(MlpConfig::new(z, &cfg.hidden, 2 * d), rng)?,
            latent_dim: z,
            beta: cfg.beta,
            posterior_collapse_warning: false,
            history: Vec::new(),
        })
    }

    pub fn num_features(&self) -> usize {
        self.decoder.output_dim() / 2
    }

    /// Posterior mean and log-variance for each row.
    pub fn encode(&self, values: &Matrix, mask: &Matrix) -> Result<(Matrix, Matrix)> {
        let out = self.encoder.forward(&encode(values, mask)?)?;
        let (mu, lv) = out.split_cols(self.latent_dim);
        Ok((mu, lv.map(clamp_logvar)))
    }

    /// Per-feature mean and log-variance for each latent row.
    pub fn decode(&self, z: &Matrix) -> Result<(Matrix, Matrix)> {
        let out = self.decoder.forward(z)?;
        let (mu, lv) = out.split_cols(self.num_features());
        Ok((mu, lv.map(clamp_logvar)))
    }

    /// `n` draws of a full feature vector from `p(x | z)`, `z ~ q(z | x_S)`,
    /// for the single partially observed instance `(values, mask)`.
    pub fn sample(&self, values: &[f64], mask: &[f64], n: usize, rng: &mut SeededRng) -> Result<Matrix> {
        let d = values.len();
        let v = Matrix::from_vec(1, d, values.to_vec())?;
        let m = Matrix::from_vec(1, d, mask.to_vec())?;
        let (mu, lv) = self.encode(&v, &m)?;
        let zdim = self.latent_dim;
        let mut z = Matrix::zeros(n, zdim);
        for r in 0..n {
            for j in 0..zdim {
                let e: f64 = rng.sample(StandardNormal);
                z[(r, j)] = mu[(0, j)] + (0.5 * lv[(0, j)]).exp() * e;
            }
        }
        let (xm, xlv) = self.decode(&z)?;
        let mut x = Matrix::zeros(n, d);
        for r in 0..n {
            for i in 0..d {
                let e: f64 = rng.sample(StandardNormal);
                x[(r, i)] = xm[(r, i)] + (0.5 * xlv[(r, i)]).exp() * e;
            }
        }
        Ok(x)
    }

    /// `n` draws from the generative model with `z ~ N(0, I)`.
    pub fn sample_prior(&self, n: usize, rng: &mut SeededRng) -> Result<Matrix> {
        let z = normal_matrix(n, self.latent_dim, rng);
        let (xm, xlv) = self.decode(&z)?;
        let mut x = xm;
        for r in 0..n {
            for i in 0..x.cols() {
                let e: f64 = rng.sample(StandardNormal);
                x[(r, i)] += (0.5 * xlv[(r, i)]).exp() * e;
            }
        }
        Ok(x)
    }

    /// Imputes one value per row for `feature`, conditioning each row's draw
    /// on that row's observed entries.
    pub fn impute_feature(
        &self,
        values: &Matrix,
        mask: &Matrix,
        features: &[usize],
        rng: &mut SeededRng,
    ) -> Result<Vec<f64>> {
        let (mu, lv) = self.encode(values, mask)?;
        let mut z = Matrix::zeros(values.rows(), self.latent_dim);
        for r in 0..values.rows() {
            for j in 0..self.latent_dim {
                let e: f64 = rng.sample(StandardNormal);
                z[(r, j)] = mu[(r, j)] + (0.5 * lv[(r, j)]).exp() * e;
            }
        }
        let (xm, xlv) = self.decode(&z)?;
        Ok(features
            .iter()
            .enumerate()
            .map(|(r, &i)| {
                let e: f64 = rng.sample(StandardNormal);
                xm[(r, i)] + (0.5 * xlv[(r, i)]).exp() * e
            })
            .collect())
    }

    /// Loss over a batch with reparameterization noise `eps`, plus encoder
    /// and decoder gradients when `grads` is set.
    fn pass(
        &self,
        values: &Matrix,
        mask: &Matrix,
        eps: &Matrix,
        grads: bool,
    ) -> Result<(PvaeLoss, Option<(MlpGrads, MlpGrads)>)> {
        let b = values.rows() as f64;
        let d = self.num_features();
        let zdim = self.latent_dim;
        let (enc_out, enc_cache) = self
            .encoder
            .forward_cached::<SeededRng>(&encode(values, mask)?, None)?;
        let mut z = Matrix::zeros(values.rows(), zdim);
        let mut kl = 0.0;
        for r in 0..values.rows() {
            for j in 0..zdim {
                let mu = enc_out[(r, j)];
                let lv = clamp_logvar(enc_out[(r, zdim + j)]);
                z[(r, j)] = mu + (0.5 * lv).exp() * eps[(r, j)];
                kl += 0.5 * (mu * mu + lv.exp() - lv - 1.0);
            }
        }
        let (dec_out, dec_cache) = self.decoder.forward_cached::<SeededRng>(&z, None)?;
        let mut recon = 0.0;
        let mut g_dec = Matrix::zeros(values.rows(), 2 * d);
        for r in 0..values.rows() {
            for i in 0..d {
                if mask[(r, i)] == 0.0 {
                    continue;
                }
                let mu = dec_out[(r, i)];
                let raw_lv = dec_out[(r, d + i)];
                let lv = clamp_logvar(raw_lv);
                let inv = (-lv).exp();
                let diff = values[(r, i)] - mu;
                recon += 0.5 * (lv + diff * diff * inv + (2.0 * PI).ln());
                g_dec[(r, i)] = -diff * inv / b;
                if raw_lv == lv {
                    g_dec[(r, d + i)] = 0.5 * (1.0 - diff * diff * inv) / b;
                }
            }
        }
        let loss = PvaeLoss {
            reconstruction: recon / b,
            kl: kl / b,
            total: (recon + self.beta * kl) / b,
        };
        if !loss.total.is_finite() {
            return Err(AfaError::Divergence(format!("PVAE loss {}", loss.total)));
        }
        if !grads {
            return Ok((loss, None));
        }
        {
            let (dec_grads, g_z) = self.decoder.backward(&dec_cache, &g_dec)?;
            let mut g_enc = Matrix::zeros(values.rows(), 2 * zdim);
            for r in 0..values.rows() {
                for j in 0..zdim {
                    let mu = enc_out[(r, j)];
                    let raw_lv = enc_out[(r, zdim + j)];
                    let lv = clamp_logvar(raw_lv);
                    let sd = (0.5 * lv).exp();
                    g_enc[(r, j)] = g_z[(r, j)] + self.beta * mu / b;
                    if raw_lv == lv {
                        g_enc[(r, zdim + j)] = g_z[(r, j)] * eps[(r, j)] * 0.5 * sd
                            + self.beta * 0.5 * (lv.exp() - 1.0) / b;
                    }
                }
            }
            let (enc_grads, _) = self.encoder.backward(&enc_cache, &g_enc)?;
            Ok((loss, Some((enc_grads, dec_grads))))
        }
    }

    fn train_step(
        &mut self,
        values: &Matrix,
        mask: &Matrix,
        eps: &Matrix,
        enc_opt: &mut Adam,
        dec_opt: &mut Adam,
    ) -> Result<PvaeLoss> {
        let (loss, grads) = self.pass(values, mask, eps, true)?;
        let (enc_grads, dec_grads) = grads.expect("requested");
        enc_opt.step(self.encoder.params_mut(), enc_grads.slices())?;
        dec_opt.step(self.decoder.params_mut(), dec_grads.slices())?;
        Ok(loss)
    }

    /// Batch loss with fresh noise and no update.
    pub fn loss(&self, values: &Matrix, mask: &Matrix, rng: &mut SeededRng) -> Result<PvaeLoss> {
        let eps = normal_matrix(values.rows(), self.latent_dim, rng);
        Ok(self.pass(values, mask, &eps, false)?.0)
    }
}

fn normal_matrix(rows: usize, cols: usize, rng: &mut SeededRng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

/// Trains on random masks; keeps the checkpoint with the best validation
/// ELBO (fixed validation masks and noise).
pub fn train_pvae(
    data: &DatasetSplits,
    masking: &MaskingDistribution,
    cfg: &PvaeConfig,
    seed: u64,
) -> Result<Pvae> {
    masking.validate()?;
    let d = data.num_features();
    let mut rng = stream(seed, "pvae");
    let mut model = Pvae::new(d, cfg, &mut rng)?;
    let mut enc_opt = Adam::new(AdamConfig::with_lr(cfg.learning_rate));
    let mut dec_opt = Adam::new(AdamConfig::with_lr(cfg.learning_rate));
    let val = if data.val.is_empty() { &data.train } else { &data.val };
    let mut val_rng = stream(seed, "pvae-val");
    let val_mask = sample_mask(val.len(), d, masking, &mut val_rng);
    let val_eps = normal_matrix(val.len(), model.latent_dim, &mut val_rng);
    let mut stopper = EarlyStopping::<Pvae>::new(cfg.patience);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut history = Vec::new();
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let x = data.train.features.select_rows(chunk);
            let m = sample_mask(chunk.len(), d, masking, &mut rng);
            let eps = normal_matrix(chunk.len(), model.latent_dim, &mut rng);
            total += model.train_step(&x, &m, &eps, &mut enc_opt, &mut dec_opt)?.total;
            batches += 1;
        }
        let (v, _) = model.pass(&val.features, &val_mask, &val_eps, false)?;
        history.push(PvaeEpoch {
            epoch,
            train_loss: total / batches as f64,
            val_elbo: -v.total,
            val_kl: v.kl,
        });
        if stopper.observe(v.total, &model) == StopDecision::Stop {
            break;
        }
    }
    let mut best = stopper.into_best().unwrap_or(model);
    let tail = history.len().saturating_sub(5);
    best.posterior_collapse_warning = history.len() >= 5 && history[tail..].iter().all(|h| h.val_kl < 1e-3);
    if best.posterior_collapse_warning {
        log::warn!("PVAE validation KL below 1e-3 nats: posterior collapse");
    }
    best.history = history;
    Ok(best)
}
