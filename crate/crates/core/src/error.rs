use thiserror::Error;

/// Errors raised by model construction, the spectral engine and the
/// experiment layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("capacity exceeded: {what} needs {requested}, cap is {cap}")]
    Capacity {
        what: String,
        requested: usize,
        cap: usize,
    },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("disorder sample {index} failed: {source}")]
    Sample {
        index: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::NumericalFailure(msg.into())
    }

    /// True when this error (or the per-sample error it wraps) is a
    /// numerical failure rather than a configuration problem.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NumericalFailure(_) => true,
            Error::Sample { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
