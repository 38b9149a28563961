use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or parameter-set structure does not line up.
    #[error("shape error in `{context}`: {detail}")]
    Shape { context: String, detail: String },

    #[error("{path}:{line}:{column}: parse error: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{path}:{line}: duplicate sample id `{id}`")]
    DuplicateId {
        path: PathBuf,
        line: usize,
        id: String,
    },

    #[error("{path}:{line}: invalid label `{value}` (expected 0 or 1)")]
    InvalidLabel {
        path: PathBuf,
        line: usize,
        value: String,
    },

    /// Requested language / split combination is not available.
    #[error("missing data: {0}")]
    MissingData(String),

    #[error("insufficient samples for one episode: have {available}, need {required}")]
    InsufficientSamples { available: usize, required: usize },

    #[error("domain pool too small: {available} usable samples after excluding support/query, need {required}")]
    DomainPoolTooSmall { available: usize, required: usize },

    #[error("threshold too strict: a predicted class has no confident samples (class 0: {class0}, class 1: {class1})")]
    ThresholdTooStrict { class0: usize, class1: usize },

    #[error("self-training aborted after {completed} completed iteration(s): {source}")]
    SelfTrainAborted {
        completed: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("run for seed {seed} failed: {source}")]
    SeedRun {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape {
            context: context.into(),
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Coarse classification used for process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Runtime,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::Parse { .. }
            | Error::DuplicateId { .. }
            | Error::InvalidLabel { .. }
            | Error::MissingData(_)
            | Error::InsufficientSamples { .. }
            | Error::DomainPoolTooSmall { .. }
            | Error::Io { .. }
            | Error::Json(_) => ErrorKind::Data,
            Error::Shape { .. } | Error::ThresholdTooStrict { .. } | Error::Numeric(_) => {
                ErrorKind::Runtime
            }
            Error::SelfTrainAborted { source, .. } | Error::SeedRun { source, .. } => source.kind(),
        }
    }
}
