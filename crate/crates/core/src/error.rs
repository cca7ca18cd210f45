use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("gibbs iteration {iteration} failed in step `{step}`: {source}")]
    Sampler {
        iteration: usize,
        step: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("evaluation step {step} ({variant}) failed: {source}")]
    Evaluation {
        step: usize,
        variant: String,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed draw store {}: {reason}", path.display())]
    Store { path: PathBuf, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the numbers rather than by inputs or files.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::NotPositiveDefinite(_) | Error::NonFinite(_) => true,
            Error::Sampler { source, .. } | Error::Evaluation { source, .. } => source.is_numeric(),
            _ => false,
        }
    }

    pub fn is_io(&self) -> bool {
        match self {
            Error::Io { .. } | Error::Store { .. } => true,
            Error::Sampler { source, .. } | Error::Evaluation { source, .. } => source.is_io(),
            _ => false,
        }
    }
}
