use thiserror::Error;

pub type Result<T> = std::result::Result<T, AfaError>;

#[derive(Debug, Error)]
pub enum AfaError {
    #[error(transparent)]
    Nn(#[from] nnkit::NnError),
    #[error("invalid dataset: {0}")]
    Dataset(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("budget {budget} exceeds feature count {features}")]
    BudgetTooLarge { budget: usize, features: usize },
    #[error("feature {0} was already acquired")]
    RepeatedAction(usize),
    #[error("episode already finished")]
    EpisodeDone,
    #[error("no legal feature left to acquire")]
    NoLegalFeature,
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("replay buffer holds {have} items, {need} needed")]
    ReplayUnderflow { have: usize, need: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("fingerprint mismatch: expected {expected}, found {found}")]
    FingerprintMismatch { expected: String, found: String },
    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(String),
    #[error("policy requires dataset {expected}, got {found}")]
    WrongDataset { expected: String, found: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl AfaError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        AfaError::Config(msg.into())
    }
}
