use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, NnError, Result};
use crate::matrix::Matrix;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub dropout_rate: f64,
    #[serde(default)]
    pub activation: Activation,
}

impl MlpConfig {
    pub fn new(input_dim: usize, hidden_dims: &[usize], output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dims: hidden_dims.to_vec(),
            output_dim,
            dropout_rate: 0.0,
            activation: Activation::Relu,
        }
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout_rate = rate;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(NnError::InvalidConfig(format!(
                "all layer widths must be >= 1, got {} -> {:?} -> {}",
                self.input_dim, self.hidden_dims, self.output_dim
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(NnError::InvalidConfig(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    /// Widths of every layer boundary, input first.
    fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden_dims.len() + 2);
        w.push(self.input_dim);
        w.extend_from_slice(&self.hidden_dims);
        w.push(self.output_dim);
        w
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub(crate) struct Linear {
    /// `in × out`, so the forward pass is `x · W + b`.
    pub(crate) weight: Matrix,
    pub(crate) bias: Vec<f64>,
}

/// Fully connected ReLU network. Dropout follows every hidden activation.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    config: MlpConfig,
    pub(crate) layers: Vec<Linear>,
}

/// Intermediate values recorded by a forward pass, consumed by [`Mlp::backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Input of each linear layer (after activation and dropout for hidden ones).
    inputs: Vec<Matrix>,
    /// Pre-activation of each hidden layer.
    pre_activations: Vec<Matrix>,
    /// Inverted-dropout multipliers per hidden layer; `None` when dropout was off.
    dropout: Vec<Option<Matrix>>,
}

/// Gradients with the same layout as the network parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(config: MlpConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let widths = config.widths();
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-limit..=limit))
                    .collect();
                Linear {
                    weight: Matrix::from_vec(fan_in, fan_out, data).expect("sized above"),
                    bias: vec![0.0; fan_out],
                }
            })
            .collect();
        Ok(Self { config, layers })
    }

    /// All weights and biases zero.
    pub fn zeros(config: MlpConfig) -> Result<Self> {
        config.validate()?;
        let widths = config.widths();
        let layers = widths
            .windows(2)
            .map(|w| Linear {
                weight: Matrix::zeros(w[0], w[1]),
                bias: vec![0.0; w[1]],
            })
            .collect();
        Ok(Self { config, layers })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn weight(&self, layer: usize) -> &Matrix {
        &self.layers[layer].weight
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut Matrix {
        &mut self.layers[layer].weight
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        &self.layers[layer].bias
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.layers[layer].bias
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.len())
            .sum()
    }

    /// Evaluation-mode forward pass (dropout off, deterministic).
    pub fn forward(&self, input: &Matrix) -> Result<Matrix> {
        self.run::<rand::rngs::ThreadRng>(input, None, false)
            .map(|(out, _)| out)
    }

    /// Forward pass with dropout applied when `train_mode` is set.
    pub fn forward_mode<R: Rng + ?Sized>(
        &self,
        input: &Matrix,
        train_mode: bool,
        rng: &mut R,
    ) -> Result<Matrix> {
        let rng = if train_mode { Some(rng) } else { None };
        self.run(input, rng, false).map(|(out, _)| out)
    }

    /// Forward pass that records what [`Mlp::backward`] needs. Dropout is
    /// applied iff `rng` is `Some`.
    pub fn forward_cached<R: Rng + ?Sized>(
        &self,
        input: &Matrix,
        rng: Option<&mut R>,
    ) -> Result<(Matrix, ForwardCache)> {
        self.run(input, rng, true)
            .map(|(out, cache)| (out, cache.expect("cache requested")))
    }

    fn run<R: Rng + ?Sized>(
        &self,
        input: &Matrix,
        mut rng: Option<&mut R>,
        keep: bool,
    ) -> Result<(Matrix, Option<ForwardCache>)> {
        check_dim("Mlp::forward input", self.config.input_dim, input.cols())?;
        let p = self.config.dropout_rate;
        let last = self.layers.len() - 1;
        let mut cache = keep.then(|| ForwardCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre_activations: Vec::with_capacity(last),
            dropout: Vec::with_capacity(last),
        });
        let mut h = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = h.matmul(&layer.weight)?;
            z.add_row_vector(&layer.bias)?;
            if let Some(c) = cache.as_mut() {
                c.inputs.push(h);
            }
            if i == last {
                return Ok((z, cache));
            }
            let mut a = z.map(|v| v.max(0.0));
            let drop = match rng.as_deref_mut() {
                Some(r) if p > 0.0 => {
                    let keep_scale = 1.0 / (1.0 - p);
                    let mask = Matrix::from_vec(
                        a.rows(),
                        a.cols(),
                        (0..a.rows() * a.cols())
                            .map(|_| if r.random::<f64>() < p { 0.0 } else { keep_scale })
                            .collect(),
                    )?;
                    a = a.hadamard(&mask)?;
                    Some(mask)
                }
                _ => None,
            };
            if let Some(c) = cache.as_mut() {
                c.pre_activations.push(z);
                c.dropout.push(drop);
            }
            h = a;
        }
        unreachable!("an Mlp always has an output layer")
    }

    /// Reverse pass: returns parameter gradients and the gradient with respect
    /// to the network input, given `d loss / d output`.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &Matrix) -> Result<(MlpGrads, Matrix)> {
        check_dim("Mlp::backward grad", self.config.output_dim, grad_output.cols())?;
        let n = self.layers.len();
        let mut weights = vec![Matrix::zeros(0, 0); n];
        let mut biases = vec![Vec::new(); n];
        let mut g = grad_output.clone();
        for i in (0..n).rev() {
            if i < n - 1 {
                if let Some(mask) = &cache.dropout[i] {
                    g = g.hadamard(mask)?;
                }
                let z = &cache.pre_activations[i];
                g = g.zip_map(z, |gv, zv| if zv > 0.0 { gv } else { 0.0 })?;
            }
            weights[i] = cache.inputs[i].t_matmul(&g)?;
            biases[i] = g.sum_rows();
            g = g.matmul_t(&self.layers[i].weight)?;
        }
        Ok((MlpGrads { weights, biases }, g))
    }

    /// Parameter slices in `[W0, b0, W1, b1, ...]` order.
    pub fn params(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    /// Polyak update: `self ← (1 − tau)·self + tau·source`.
    pub fn soft_update_from(&mut self, source: &Mlp, tau: f64) -> Result<()> {
        check_dim("Mlp::soft_update_from", self.num_params(), source.num_params())?;
        for (dst, src) in self.params_mut().into_iter().zip(source.params()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = (1.0 - tau) * *d + tau * s;
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.params().iter().all(|p| p.iter().all(|v| v.is_finite()))
    }
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            weights: mlp
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.weight.rows(), l.weight.cols()))
                .collect(),
            biases: mlp.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
            .collect()
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.add_assign(b).expect("same network");
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.weights.iter_mut().for_each(|w| w.scale(factor));
        self.biases
            .iter_mut()
            .for_each(|b| b.iter_mut().for_each(|v| *v *= factor));
    }

    pub fn norm(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales so the global L2 norm is at most `max_norm`.
    pub fn clip_norm(&mut self, max_norm: f64) {
        let n = self.norm();
        if n > max_norm && n > 0.0 {
            self.scale(max_norm / n);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}
