use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid torus: {0}")]
    InvalidTorus(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("time {t} outside the trajectory window [0, {t_end}]")]
    TimeOutOfRange { t: f64, t_end: f64 },

    #[error("field length {got} does not match torus with {expected} sites")]
    FieldLength { expected: usize, got: usize },

    #[error("solver produced a non-finite value at t = {t}")]
    NonFinite { t: f64 },

    #[error("solution vanished at the origin at t = {t}")]
    VanishedAtOrigin { t: f64 },

    #[error("degenerate estimate: none of the {n} samples were accepted")]
    Degenerate { n: usize },

    #[error("{failed} of {total} replicas failed; first failure: {first}")]
    TooManyFailures {
        failed: usize,
        total: usize,
        first: Box<Error>,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("malformed trajectory record: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
