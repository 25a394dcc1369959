use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the model, data pipeline, or harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("masked slice has no support ({0})")]
    EmptySupport(&'static str),

    #[error("gradient missing for parameter `{0}`")]
    MissingGradient(String),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("duplicate parameter `{0}`")]
    DuplicateParameter(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid optimizer settings: {0}")]
    InvalidHyper(String),

    #[error("malformed line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },

    #[error("malformed record {record}: {reason}")]
    MalformedRecord { record: usize, reason: String },

    #[error("negative pool too small: need {needed} distinct responses, have {available}")]
    InsufficientPool { needed: usize, available: usize },

    #[error("token id {id} out of range for vocabulary of {size}")]
    IdOutOfRange { id: usize, size: usize },

    #[error("cannot read {path}: {source}")]
    FileUnreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("context has no real utterance")]
    EmptyContext,

    #[error("knowledge collection has no real entry")]
    EmptyKnowledge,

    #[error("label {label} out of range for {n} candidates")]
    LabelOutOfRange { label: usize, n: usize },

    #[error("loss diverged at epoch {epoch}, step {step}: {value}")]
    DivergedLoss { epoch: usize, step: usize, value: f64 },

    #[error("hash mismatch: expected {expected}, found {found}")]
    HashMismatch { expected: String, found: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }
}
