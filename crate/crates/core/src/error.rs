//! Crate-wide error type.

use std::fmt;

/// Errors surfaced by tensor geometry, filtering, inference and file I/O.
#[derive(Debug)]
pub enum Error {
    /// Tensor or parameter shapes are inconsistent for the requested operation.
    ShapeMismatch(String),
    /// A sliding window does not fit the (padded) input extent.
    InvalidWindow(String),
    /// A scalar parameter is out of its valid range.
    InvalidParam(String),
    /// A marginal distribution failed its normalization precondition.
    NotNormalized { sum: f64, pixel: (usize, usize) },
    /// Input exceeds a brute-force guardrail.
    TooLarge(String),
    /// Backward was requested without a matching cached forward pass.
    MissingForward(&'static str),
    /// Underlying file I/O failure.
    Io(std::io::Error),
    /// Malformed file contents; `offset` is the byte position of the problem.
    Parse { offset: usize, message: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch(m) => write!(f, "shape mismatch: {m}"),
            Error::InvalidWindow(m) => write!(f, "invalid window: {m}"),
            Error::InvalidParam(m) => write!(f, "invalid parameter: {m}"),
            Error::NotNormalized { sum, pixel } => write!(
                f,
                "marginals at pixel ({}, {}) sum to {sum}, expected 1",
                pixel.0, pixel.1
            ),
            Error::TooLarge(m) => write!(f, "input too large: {m}"),
            Error::MissingForward(op) => write!(f, "{op}: backward called before forward"),
            Error::Io(e) => write!(f, "i/o error: {e}"),
            Error::Parse { offset, message } => {
                write!(f, "parse error at byte {offset}: {message}")
            }
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
