//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("truncated payload: expected {expected} bytes, got {got}")]
    TruncatedPayload { expected: usize, got: usize },

    #[error("unsupported format version {got} (expected {expected})")]
    VersionMismatch { expected: u8, got: u8 },

    #[error("empty scene")]
    EmptyScene,

    #[error("invalid rotation: quaternion norm {0} at index {1}")]
    InvalidRotation(f64, usize),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("unknown label: {0}")]
    UnknownLabel(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("missing input: {0}")]
    MissingInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
