use std::io;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor extents or geometry do not fit the operation.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A forward primitive produced NaN or an infinity.
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    /// Training diverged; carries the batch index and the offending loss terms.
    #[error("training collapsed at batch {batch}: {detail}")]
    Collapse { batch: u64, detail: String },

    /// A score is undefined for this input (for example every factor is constant).
    #[error("undefined score: {0}")]
    Undefined(String),

    /// A file did not match its binary or text format.
    #[error("format error: {0}")]
    Format(String),

    /// A configuration document was rejected.
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

macro_rules! dim_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Dimension(format!($($arg)*))
    };
}

macro_rules! contract_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Contract(format!($($arg)*))
    };
}

pub(crate) use contract_err;
pub(crate) use dim_err;
