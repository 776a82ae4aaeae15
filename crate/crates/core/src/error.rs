use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error in `{field}`: {message}")]
    Parse { field: String, message: String },

    #[error("schema error in `{field}`: {message}")]
    Schema { field: String, message: String },

    #[error("unknown domain `{0}`")]
    UnknownDomain(String),

    #[error("unknown slot `{slot}` in domain `{domain}`")]
    UnknownSlot { domain: String, slot: String },

    #[error("dialog act `{0}` is not in the action space")]
    UnknownAct(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("goal sampling exhausted after {attempts} attempts in domain `{domain}`")]
    SamplingExhausted { domain: String, attempts: usize },

    #[error("no value for slot `{slot}` in domain `{domain}`")]
    MissingValue { domain: String, slot: String },

    #[error("activation cache does not match the network: {0}")]
    StaleCache(String),

    #[error("corpus is empty or smaller than one batch")]
    EmptyCorpus,

    #[error("training diverged at iteration {iteration}: {detail}")]
    Divergence { iteration: usize, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("malformed record in {path}: {message}")]
    Record { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn schema(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema { field: field.into(), message: message.into() }
    }
}
