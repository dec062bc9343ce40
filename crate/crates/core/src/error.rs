use thiserror::Error;

/// Errors produced by the estimation pipeline and its substrate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("row {row} has no unmasked entries")]
    FullyMasked { row: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("full-spectrum energy is zero; input is all-zero")]
    ZeroEnergy,

    #[error("query token {token} has no selected key")]
    EmptyKeySet { token: usize },

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("malformed tensor file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
