use thiserror::Error;

/// Library-wide error type. Every fallible operation in this crate returns
/// one of these variants rather than panicking, so callers (and the CLI exit
/// code mapping) can distinguish bad input from numeric blow-ups.
#[derive(Debug, Error)]
pub enum Error {
    /// Shape mismatch or malformed tensor/graph construction.
    #[error("shape error: {0}")]
    Shape(String),

    /// Graph misuse: unknown value name, forward before binding, backward
    /// before forward, optimizer step before backward, and similar.
    #[error("graph error: {0}")]
    Graph(String),

    /// Invalid configuration value (negative learning rate, zero batch size,
    /// alpha outside [0, 1], ...).
    #[error("config error: {0}")]
    Config(String),

    /// Malformed or truncated dataset file.
    #[error("dataset error in {path}: {reason}")]
    Dataset { path: String, reason: String },

    /// A numeric failure at runtime: NaN/inf loss, non-positive-definite
    /// covariance, degenerate ROC input, and similar.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Checkpoint container problems: bad magic, unsupported version,
    /// mismatched shapes or config hash.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn graph(msg: impl Into<String>) -> Self {
        Error::Graph(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn checkpoint(msg: impl Into<String>) -> Self {
        Error::Checkpoint(msg.into())
    }

    pub fn dataset(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Dataset {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
