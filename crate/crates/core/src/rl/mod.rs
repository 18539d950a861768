//! Reinforcement-learning acquisition policies.
//!
//! - [`jafa`]: DQN with λ-return targets on the terminal loss, over a set
//!   encoding of the observed features,
//! - [`ol`]: DQN on the certainty reward with a coupled PQ network,
//! - [`ppo`]: ODIN, PPO on the dense loss reward, optionally with PVAE
//!   imputed rollouts.

pub mod dqn;
pub mod jafa;
pub mod ol;
pub mod ppo;
pub mod replay;
pub mod set_encoder;
pub mod td;

pub use dqn::{
    train_dqn, write_training_curve, DqnConfig, DqnLearner, DqnPolicy, JointTraining, TargetKind,
    TrainingRecord,
};
pub use jafa::{train_jafa, JafaConfig, JafaNet, JafaPolicy};
pub use ol::{train_ol, OlConfig, OlNet, OlPolicy};
pub use ppo::{gae, masked_softmax, train_odin, OdinPolicy, PpoAgent, PpoConfig};
pub use replay::ReplayBuffer;
pub use set_encoder::{SetEncoder, SetEncoderConfig};
pub use td::{lambda_return, n_step_weight};
