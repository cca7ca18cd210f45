use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{stage}: {message}")]
    Config { stage: &'static str, message: String },

    #[error("{stage}: {}: {source}", path.display())]
    Io {
        stage: &'static str,
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{stage}: {inner}")]
    Engine {
        stage: &'static str,
        inner: mbsts_core::Error,
    },
}

impl CliError {
    pub fn config(stage: &'static str, message: impl Into<String>) -> Self {
        CliError::Config {
            stage,
            message: message.into(),
        }
    }

    pub fn io(stage: &'static str, path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            stage,
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn engine(stage: &'static str, source: mbsts_core::Error) -> Self {
        CliError::Engine { stage, inner: source }
    }

    /// 2 config error, 3 numeric failure, 4 I/O error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Io { .. } => 4,
            CliError::Engine { inner, .. } => {
                if inner.is_io() {
                    4
                } else if inner.is_numeric() {
                    3
                } else {
                    2
                }
            }
        }
    }
}

/// Attaches a stage name to engine errors.
pub trait Stage<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> Stage<T> for mbsts_core::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| CliError::engine(stage, e))
    }
}
