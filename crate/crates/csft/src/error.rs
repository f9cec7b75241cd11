use std::error::Error as StdError;
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An input or configuration value violates a documented invariant.
    InvalidParameter(String),
    /// A requested sample time falls outside `[0, T]^d`.
    Duration { coord: usize, value: f64, duration: f64 },
    /// The duration is too short for the requested sampling pattern.
    DurationTooShort(String),
    /// `k` tones at separation `eta` cannot fit in the frequency band.
    InfeasiblePacking(String),
    UnknownId(usize),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
            Error::Duration { coord, value, duration } => write!(
                f,
                "sample time coordinate {coord} = {value} lies outside [0, {duration}]"
            ),
            Error::DurationTooShort(msg) => write!(f, "duration too short: {msg}"),
            Error::InfeasiblePacking(msg) => write!(f, "infeasible tone packing: {msg}"),
            Error::UnknownId(id) => write!(f, "unknown point id {id}"),
        }
    }
}

impl StdError for Error {}

impl Error {
    pub fn is_duration(&self) -> bool {
        matches!(self, Error::Duration { .. } | Error::DurationTooShort(_))
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
