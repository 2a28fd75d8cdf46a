//! Crate-wide error type.

use thiserror::Error;

/// Errors produced anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// Two matrices or a matrix and a net disagree on dimensions.
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    /// A NaN or infinity showed up where finite reals are required.
    #[error("non-finite value in {context} at row {row}, col {col}")]
    NonFinite {
        context: &'static str,
        row: usize,
        col: usize,
    },

    /// A class label falls outside `[0, classes)`.
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    /// A precondition on an operation argument failed.
    #[error("{0}")]
    InvalidArgument(String),

    /// An experiment config failed validation; `path` is the offending field.
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    /// A data file could not be parsed.
    #[error("{path}:{line}: {message}")]
    DataFormat {
        path: String,
        line: usize,
        message: String,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
