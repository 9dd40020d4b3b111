//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },

    #[error("degenerate feature")]
    DegenerateFeature,

    #[error("non-finite objective")]
    NonFiniteObjective,

    #[error("gradient check failed: {0}")]
    GradCheckFailed(String),

    #[error("configuration error: {key}: {constraint}")]
    Config { key: String, constraint: String },

    #[error("dataset error at record {index}: {message}")]
    Dataset { index: usize, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training diverged: non-finite loss at step {step} (last finite state saved)")]
    Diverged { step: usize },

    #[error("anchor ordering mismatch: {0}")]
    OrderingMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, constraint: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            constraint: constraint.into(),
        }
    }

    pub fn shapes(left: &[usize], right: &[usize]) -> Self {
        Error::ShapeMismatch {
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
