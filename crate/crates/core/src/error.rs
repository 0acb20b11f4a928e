use thiserror::Error;

/// Errors surfaced by the runtime and by components.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    #[error("decode error: {0}")]
    Decode(String),
    #[error("index {index} out of range for length {len}")]
    Range { index: usize, len: usize },
    #[error("unknown child {0:?}")]
    UnknownChild(String),
    #[error("duplicate child name {0:?}")]
    DuplicateName(String),
    #[error("target of path {0:?} no longer exists")]
    Orphaned(Vec<String>),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error("type mismatch at path {0:?}")]
    TypeMismatch(Vec<String>),
}

impl Error {
    pub(crate) fn decode(msg: impl Into<String>) -> Self {
        Error::Decode(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
