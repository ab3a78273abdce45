use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("empty text")]
    EmptyText,

    #[error("ragged embedding file: line {line} has {found} values, expected {expected}")]
    RaggedEmbeddings {
        line: usize,
        found: usize,
        expected: usize,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("token id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: u32, size: usize },

    #[error("sequence of length {len} exceeds max_len {max_len}")]
    TooLong { len: usize, max_len: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("enumeration too large: {0} draw sequences")]
    EnumerationTooLarge(u128),

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("diverged: {0}")]
    Diverged(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimMismatch(msg.into())
    }
}
