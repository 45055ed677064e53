//! Crate-wide error type.
//!
//! Variants map onto the failure classes the public APIs promise:
//! shape/dimension violations, bad configuration (with the offending line),
//! malformed on-disk data (with a byte offset), broken call contracts, and
//! numeric-domain violations (e.g. sqrt of a negative tensor).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes that cannot be combined or do not match a declared shape.
    #[error("dimension error: {0}")]
    Dim(String),

    /// Invalid or inconsistent configuration values.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed bytes in a file or stream; `offset` is where parsing failed.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    /// An API precondition was violated by the caller.
    #[error("contract error: {0}")]
    Contract(String),

    /// A mathematical domain violation (negative sqrt input, log of zero, non-finite loss).
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dim(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format { offset, msg: msg.into() }
    }
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
