use thiserror::Error;

/// Error type shared by every module in the engine.
#[derive(Debug, Error)]
pub enum PtrError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty input to {0}")]
    EmptyInput(&'static str),

    #[error("zero-norm query vector")]
    ZeroNormQuery,

    #[error("candidate set needs at least one negative")]
    EmptyNegativePool,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config hash mismatch: checkpoint was written by a different configuration")]
    ConfigHashMismatch,

    #[error("non-finite loss at step {step} ({detail})")]
    NonFiniteLoss { step: u64, detail: String },

    #[error("snapshot corrupt: {0}")]
    SnapshotCorrupt(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PtrError>;
