use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

/// Error type shared by every module in the core crate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// Shape or length mismatch between operands.
    Dimension(String),
    /// Invalid configuration value.
    Config(String),
    /// Invalid data content (out-of-range labels, unpaired clips, ...).
    Data(String),
    /// Operation called in an invalid state.
    State(String),
    /// Training diverged (non-finite loss or parameters).
    Training(String),
}

impl Error {
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Config(_) => "config",
            Error::Data(_) => "data",
            Error::State(_) => "state",
            Error::Training(_) => "training",
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension(msg) => write!(f, "dimension error: {msg}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Data(msg) => write!(f, "data error: {msg}"),
            Error::State(msg) => write!(f, "state error: {msg}"),
            Error::Training(msg) => write!(f, "training error: {msg}"),
        }
    }
}
