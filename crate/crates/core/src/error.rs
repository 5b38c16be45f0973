use thiserror::Error;

/// Errors produced by the simulation and optimization core.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the operation's mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A caller-side precondition was violated (bad ratio, off-simplex point, ...).
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Two components were combined with incompatible shapes or provenance.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A numerical procedure failed (singular system, non-finite objective, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Malformed or incompatible event-stream file.
    #[error("event stream io: {0}")]
    StreamFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
