use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("non-finite loss at epoch {epoch}, step {step} ({what})")]
    Numeric {
        epoch: usize,
        step: usize,
        what: String,
    },

    #[error("gradient check failed: {0}")]
    Gradcheck(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status used by the `dslab` binary: 1 usage/config,
    /// 2 numeric failure or failed gradient check, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric { .. } | Error::Gradcheck(_) => 2,
            Error::Io { .. } => 3,
            _ => 1,
        }
    }
}
