//! Error type shared by every module in the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or layer shapes do not line up.
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// A data or container file failed to parse.
    #[error("parse error at {path}:{line}: {detail}")]
    Parse {
        path: String,
        line: usize,
        detail: String,
    },

    /// Invalid invocation, flag value, or missing input.
    #[error("{0}")]
    Usage(String),

    /// Bad configuration key or value.
    #[error("config error: {0}")]
    Config(String),

    /// Checkpoint container is malformed or incompatible with the config.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Training or inference produced non-finite values.
    #[error("numerical failure: {0}")]
    Numeric(String),

    /// Filesystem failure, annotated with the path involved.
    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl Error {
    pub fn dimension(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 1 for usage/config problems,
    /// 2 for runtime and numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config(_) | Error::Parse { .. } | Error::Checkpoint(_) => 1,
            Error::Dimension { .. } | Error::Numeric(_) | Error::Io { .. } => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
