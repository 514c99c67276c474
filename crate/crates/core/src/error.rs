//! Crate-wide error type.
//!
//! Errors split into two broad families: input problems (validation, parse,
//! configuration, shape, degenerate data) and environment problems (I/O,
//! transport). The CLI maps the former to exit code 1 and the latter to 2.

use std::path::PathBuf;

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path} at line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("validation error for record '{record}', field '{field}': {msg}")]
    Validation {
        record: String,
        field: String,
        msg: String,
    },

    /// A record lacks the fields a method needs.
    #[error("record '{record}' does not satisfy requirements of '{method}': missing {missing:?}")]
    Requirement {
        record: String,
        method: String,
        missing: Vec<String>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// A metric has no defined value on the given data (e.g. single-class AUROC).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("missing data: {0}")]
    MissingData(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("transport error: {0}")]
    Transport(String),
}

impl Error {
    /// Exit status the CLI should use for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Transport(_) => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
