//! Minimal dense-network stack.
//!
//! Everything a tabular acquisition benchmark needs to train its learned
//! components: a row-major [`Matrix`], multilayer perceptrons with ReLU and
//! inverted dropout, layer-wise reverse-mode gradients (including the gradient
//! with respect to the network input, so relaxed selection layers can be
//! trained end to end), weighted cross-entropy and Adam.
//!
//! All arithmetic is `f64`. There is no global state; every source of
//! randomness is an explicit `Rng` argument.

pub mod adam;
pub mod checkpoint;
pub mod error;
pub mod loss;
pub mod matrix;
pub mod mlp;
pub mod train;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::MlpCheckpoint;
pub use error::{NnError, Result};
pub use loss::{
    cross_entropy_per_sample, log_softmax_row, softmax_row, softmax_rows, weighted_cross_entropy,
};
pub use matrix::Matrix;
pub use mlp::{Activation, ForwardCache, Mlp, MlpConfig, MlpGrads};
pub use train::{EarlyStopping, StopDecision, TrainConfig};
