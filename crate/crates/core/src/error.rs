use std::io;

use thiserror::Error;

/// Errors raised across the training engine.
///
/// Variants are grouped by class so callers (notably the CLI) can map them
/// onto stable exit codes: see [`EudaError::class`].
#[derive(Debug, Error)]
pub enum EudaError {
    /// Malformed file: bad magic, unsupported version, truncation, bad header.
    #[error("format error: {0}")]
    Format(String),

    /// Well-formed file carrying invalid values (NaN/Inf, empty matrix).
    #[error("data error: {0}")]
    Data(String),

    /// Values that disagree with each other, e.g. a label >= the declared class count.
    #[error("consistency error: {0}")]
    Consistency(String),

    /// A precondition of an operation was violated by the caller.
    #[error("contract error: {0}")]
    Contract(String),

    /// Tensor shapes do not chain or do not match the expected dimensions.
    #[error("shape error: {0}")]
    Shape(String),

    /// An invalid configuration value; `field` names the offending key.
    #[error("config error: invalid `{field}`: {reason}")]
    Config { field: String, reason: String },

    /// Training produced a non-finite loss.
    #[error("divergence at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

/// Coarse error class used for exit-code partitioning.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Divergence,
}

impl EudaError {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        EudaError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: io::Error) -> Self {
        EudaError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            EudaError::Config { .. } | EudaError::Contract(_) => ErrorClass::Config,
            EudaError::Divergence { .. } => ErrorClass::Divergence,
            EudaError::Format(_)
            | EudaError::Data(_)
            | EudaError::Consistency(_)
            | EudaError::Shape(_)
            | EudaError::Io { .. } => ErrorClass::Data,
        }
    }
}

pub type Result<T> = std::result::Result<T, EudaError>;
