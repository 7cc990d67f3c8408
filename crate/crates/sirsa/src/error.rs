//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SirsaError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("non-finite gradient in layer {layer}")]
    NonFiniteGradient { layer: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("suite error: {0}")]
    Suite(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
