use thiserror::Error;

/// Errors raised by the library.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),

    #[error("sequence space size overflows the platform integer range")]
    SpaceOverflow,

    #[error("sequence space has {size} elements, more than the limit of {limit}")]
    SpaceTooLarge { size: u64, limit: u64 },

    #[error("index {index} out of range for space of size {size}")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("invalid sequence: {0}")]
    InvalidSequence(String),

    #[error("invalid probability vector: {0}")]
    InvalidDistribution(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("invalid reward: {0}")]
    InvalidReward(String),

    #[error("beta must be positive and finite, got {0}")]
    InvalidBeta(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
