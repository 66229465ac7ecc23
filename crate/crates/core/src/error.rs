use std::path::PathBuf;

use crate::tensor::PrimitiveKind;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("{kind}: shape mismatch ({detail})")]
    ShapeMismatch { kind: PrimitiveKind, detail: String },

    #[error("{kind}: produced a non-finite value")]
    NonFinite { kind: PrimitiveKind },

    #[error("loss must be a scalar, got shape {0:?}")]
    LossNotScalar(Vec<usize>),

    #[error("gradient tape already consumed")]
    TapeConsumed,

    #[error("parameter `{0}` not found")]
    MissingParam(String),

    #[error("gradient set does not match trainable parameters: {0}")]
    GradientCoverage(String),

    #[error("gradient for `{name}` has shape {grad:?}, parameter has {param:?}")]
    GradientShape { name: String, grad: Vec<usize>, param: Vec<usize> },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("task `{task}`: {detail}")]
    Task { task: String, detail: String },

    #[error("metric: {0}")]
    Metric(String),

    #[error("{path}: row {row}: {detail}")]
    Data { path: String, row: usize, detail: String },

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error("checkpoint integrity: {0}")]
    Integrity(String),

    #[error("base fingerprint mismatch for task `{task}` at tensor `{tensor}`")]
    FingerprintMismatch { task: String, tensor: String },

    #[error("config mismatch for task `{task}`: {detail}")]
    ConfigMismatch { task: String, detail: String },

    #[error("duplicate task id `{0}`")]
    DuplicateTask(String),

    #[error("unknown task id `{0}`")]
    UnknownTask(String),

    #[error("allocation: {0}")]
    Allocation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }
}
