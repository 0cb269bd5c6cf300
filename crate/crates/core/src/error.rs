//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{context}: dimension mismatch ({left} vs {right})")]
    DimensionMismatch {
        context: &'static str,
        left: usize,
        right: usize,
    },

    #[error("{which} argument has zero norm")]
    ZeroNorm { which: &'static str },

    #[error("{what} must not be empty")]
    Empty { what: &'static str },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("domain {subject_id} carries no labels")]
    Unlabeled { subject_id: String },

    #[error("invalid configuration: {message}")]
    InvalidConfig { message: String },

    #[error("failed to parse {what}: {message}")]
    Parse { what: &'static str, message: String },
}

impl Error {
    pub fn invalid_config(message: impl Into<String>) -> Self {
        Error::InvalidConfig {
            message: message.into(),
        }
    }
}
