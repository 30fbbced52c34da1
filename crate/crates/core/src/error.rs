use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, TarError>;

/// Every failure the library can report, grouped so callers can map them
/// onto stable process exit codes.
#[derive(Debug, Error)]
pub enum TarError {
    /// A caller broke an operation's contract (shape mismatch, bad argument).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid configuration or an unsatisfiable request.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed file contents.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },

    /// NaN or infinity observed where finite values are required.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl TarError {
    pub fn contract(msg: impl Into<String>) -> Self {
        TarError::Contract(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        TarError::Config(msg.into())
    }

    pub fn format(offset: usize, msg: impl Into<String>) -> Self {
        TarError::Format {
            offset,
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TarError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 configuration, 3 data/format/io, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            TarError::Contract(_) | TarError::Config(_) => 2,
            TarError::Format { .. } | TarError::Io { .. } => 3,
            TarError::Numeric(_) => 4,
        }
    }
}
