//! Crate-wide error type.

use std::fmt;

/// Errors produced by dataset handling, model fitting, and evaluation.
#[derive(Debug)]
pub enum Error {
    /// An argument was outside its documented range or otherwise unusable.
    InvalidInput(String),
    /// A dataset violated a structural requirement (shape, labels, content).
    Data(String),
    /// A CSV cell could not be parsed. Row and column are 1-based and refer to
    /// the data portion of the file (the header is row 0).
    Parse {
        row: usize,
        col: usize,
        message: String,
    },
    /// A (class, feature) cell had no usable observations.
    EmptyCell {
        class: usize,
        feature: usize,
        message: String,
    },
    /// A model method was called before fitting.
    NotFitted(&'static str),
    /// The cached normalizer no longer matches the network parameters.
    StaleNormalizer { cached: u64, current: u64 },
    /// A loss or intermediate value became non-finite.
    NonFinite(String),
    /// A penalty bin received no normalizer points.
    EmptyBin { axis: usize, bin: usize },
    /// An iterative fit failed to converge.
    NoConvergence(String),
    Io(std::io::Error),
    Json(serde_json::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidInput(msg) => write!(f, "invalid input: {msg}"),
            Error::Data(msg) => write!(f, "bad dataset: {msg}"),
            Error::Parse { row, col, message } => {
                write!(f, "parse error at row {row}, column {col}: {message}")
            }
            Error::EmptyCell {
                class,
                feature,
                message,
            } => write!(f, "cell (class {class}, feature {feature}): {message}"),
            Error::NotFitted(what) => write!(f, "{what} is not fitted"),
            Error::StaleNormalizer { cached, current } => write!(
                f,
                "normalizer cache is stale (cached for parameter version {cached}, \
                 network is at {current}); refresh before evaluating the density"
            ),
            Error::NonFinite(msg) => write!(f, "non-finite value: {msg}"),
            Error::EmptyBin { axis, bin } => write!(
                f,
                "penalty bin {bin} on axis {axis} contains no normalizer points; \
                 increase the point count or reduce the bin count"
            ),
            Error::NoConvergence(msg) => write!(f, "no convergence: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::Json(e) => write!(f, "json error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            Error::Json(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e)
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        match e.kind() {
            csv::ErrorKind::Io(_) => {
                if let csv::ErrorKind::Io(io) = e.into_kind() {
                    Error::Io(io)
                } else {
                    unreachable!()
                }
            }
            _ => Error::Data(e.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
