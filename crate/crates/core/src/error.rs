use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("zero-power input: SNR is undefined")]
    ZeroPower,
    #[error("every subcarrier is faded below {epsilon:e}")]
    AllFaded { epsilon: f64 },
    #[error("rank-deficient tap basis at column {0}")]
    RankDeficient(usize),
    #[error("insufficient data: {0}")]
    Insufficient(String),
    #[error("resource limit: {0}")]
    ResourceLimit(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Neural(#[from] csirff_neural::NnError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Errors decoding the binary dataset and population files.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic bytes {found:?}, expected {expected:?}")]
    BadMagic { found: [u8; 4], expected: [u8; 4] },
    #[error("unsupported format version {0}")]
    Version(u16),
    #[error("truncated file: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("corrupt file: {0}")]
    Corrupt(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
