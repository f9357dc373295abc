//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CoreError>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: non-finite output")]
    NonFinite { op: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("tape already consumed by backward")]
    TapeConsumed,

    #[error("variables belong to different tapes")]
    TapeMismatch,

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },

    #[error("reserved token `{0}` not allowed inside question or answer")]
    ReservedToken(String),

    #[error("langevin chain {chain} became non-finite at step {step}")]
    ChainDiverged { chain: usize, step: usize },

    #[error("training diverged at task {task}, iteration {iteration}")]
    TrainingDiverged { task: usize, iteration: usize },

    #[error("sample store stage {given} not after last stage {last}")]
    StageRegression { given: usize, last: usize },

    #[error("malformed store line {line} in {file}: {reason}")]
    MalformedStoreLine {
        file: String,
        line: usize,
        reason: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CoreError {
    /// Process exit code for the CLI: 2 for configuration problems,
    /// 3 for numerical divergence, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CoreError::Config(_) | CoreError::InvalidArgument(_) => 2,
            CoreError::ChainDiverged { .. }
            | CoreError::TrainingDiverged { .. }
            | CoreError::NonFinite { .. } => 3,
            _ => 1,
        }
    }
}
