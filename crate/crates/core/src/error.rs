use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("log of non-positive value {0}")]
    LogDomain(f64),

    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite loss encountered during {0}")]
    NonFinite(&'static str),

    #[error("parameter key mismatch: {0}")]
    KeyMismatch(String),

    #[error("unknown block id {0}")]
    UnknownBlock(u64),

    #[error("importance vector for layer {layer} has length {got}, expected {expected}")]
    ImportanceLength {
        layer: usize,
        got: usize,
        expected: usize,
    },

    #[error("stale candidate reference in layer {layer}: index {index}")]
    StaleCandidate { layer: usize, index: usize },

    #[error("task index {got} does not follow buffer length {expected}")]
    TaskIndex { expected: usize, got: usize },

    #[error("no buffered task uses block {0}")]
    NoSharingTask(u64),

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("malformed IDX data: {0}")]
    Idx(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("config: {0}")]
    ConfigValue(String),

    #[error("{0} is not implemented")]
    Unsupported(&'static str),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
