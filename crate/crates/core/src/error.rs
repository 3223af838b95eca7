use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("{path}: line {line}: {message}")]
    Parse { path: PathBuf, line: u64, message: String },

    #[error("{path}: schema error: {message}")]
    Schema { path: PathBuf, message: String },

    #[error("scale estimation failed: {0}")]
    Estimation(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    TrainingDiverged { epoch: usize },

    #[error("degenerate boundary direction: {0}")]
    DegenerateDirection(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid attacker: {0}")]
    InvalidAttacker(String),

    #[error("attack infeasible: {0}")]
    Infeasible(String),

    #[error("K-S test: {0}")]
    KsTest(String),

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
