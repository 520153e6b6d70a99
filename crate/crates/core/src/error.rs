use alloc::format;
use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Failure modes shared by every module in the crate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Error {
    /// A caller-supplied argument violated a precondition.
    InvalidArgument(String),
    /// A computation produced a non-finite or singular intermediate.
    NumericFailure(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::NumericFailure(msg.into())
    }

    /// Prefixes the message with where the failure happened.
    pub fn context(self, ctx: impl fmt::Display) -> Self {
        match self {
            Error::InvalidArgument(m) => Error::InvalidArgument(format!("{ctx}: {m}")),
            Error::NumericFailure(m) => Error::NumericFailure(format!("{ctx}: {m}")),
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NumericFailure(_))
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(m) => write!(f, "invalid argument: {m}"),
            Error::NumericFailure(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

impl core::error::Error for Error {}
