use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the mathematical domain of an estimator.
    #[error("parameter out of domain: {0}")]
    Domain(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    /// The WSAF table reached its hard capacity and the key is not resident.
    #[error("flow table at hard capacity ({0} entries)")]
    Capacity(usize),

    #[error("unsupported trace format: {0}")]
    UnsupportedFormat(String),

    #[error("malformed input ({context}): {msg}")]
    Malformed { context: String, msg: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn malformed(context: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Malformed {
            context: context.into(),
            msg: msg.into(),
        }
    }

    /// True for errors caused by the content or availability of input files,
    /// as opposed to bad parameters.
    pub fn is_io_or_format(&self) -> bool {
        matches!(
            self,
            Error::Io(_) | Error::Csv(_) | Error::UnsupportedFormat(_) | Error::Malformed { .. }
        )
    }
}
