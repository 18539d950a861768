//! Active feature acquisition benchmark.
//!
//! Every acquisition method implements [`policy::Policy`]: given the features
//! observed so far for one instance, return the next feature to reveal. The
//! [`harness`] rolls each policy out under a hard per-instance budget and
//! scores the prediction made after every acquisition.
//!
//! Method families:
//! - greedy conditional-mutual-information policies ([`greedy`]: EDDI-GG,
//!   GDFS-DG, DIME-DG),
//! - reinforcement learning on the acquisition MDP ([`env`], [`rl`]:
//!   JAFA-MFRL, OL-MFRL, ODIN-MFRL/MBRL),
//! - the kNN approximate oracle ([`aaco`]),
//! - static baselines ([`static_policies`]: PT-S, CAE-S).

pub mod aaco;
pub mod datasets;
pub mod env;
pub mod error;
pub mod greedy;
pub mod harness;
pub mod policy;
pub mod predictor;
pub mod rl;
pub mod rng;
pub mod static_policies;

pub use error::{AfaError, Result};
