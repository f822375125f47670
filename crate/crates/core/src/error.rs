use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("tensor of shape {shape:?} needs {expected} values, got {actual}")]
    BadTensor {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    #[error("train-mode batch normalization needs at least 2 samples, got {0}")]
    BatchTooSmall(usize),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("forward cache does not match this backward call: {0}")]
    CacheMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),

    #[error("could not give every one of {clients} clients a sample after {attempts} draws")]
    PartitionFailed { clients: usize, attempts: usize },

    #[error("{path}:{line}: {message}")]
    Csv {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("no feasible candidate for target density {target} after {attempts} draws")]
    CandidateBudget { target: f64, attempts: usize },

    #[error("missing report for client {client}, candidate {candidate}")]
    MissingReport { client: usize, candidate: usize },

    #[error("grow/prune plan does not match mask: {0}")]
    InvalidPlan(String),

    #[error("unknown algorithm tag `{0}`")]
    UnknownAlgorithm(String),

    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
