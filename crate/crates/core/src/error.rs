//! Error kinds shared across the crate.

use std::fmt;
use std::io;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors emitted by tensor I/O, factorizations, and the solver.
#[derive(Debug)]
pub enum Error {
    /// Underlying I/O failure, with the path that was being touched.
    Io { path: String, source: io::Error },
    /// A container header did not match the expected layout (bad magic,
    /// unknown version, unsupported dtype, wrong rank).
    Format { path: String, detail: String },
    /// A payload ended before the declared element count.
    Truncated {
        path: String,
        expected: usize,
        got: usize,
    },
    /// A loaded payload contained NaN or infinite values.
    NonFinite { path: String, index: usize },
    /// A configuration value violated its documented range.
    InvalidConfig { detail: String },
    /// Tensor shapes do not line up for the requested operation.
    DimensionMismatch { detail: String },
    /// The damped Hessian was not positive definite.
    SingularHessian { detail: String },
    /// A triangular or normal-equation solve hit a zero pivot.
    Singular { detail: String },
    /// An exhaustive oracle was asked for a search space beyond its guard.
    OracleSize { detail: String },
    /// A caller-supplied value failed a documented precondition.
    Precondition { detail: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Io { path, source } => write!(f, "i/o error on {path}: {source}"),
            Error::Format { path, detail } => write!(f, "format error in {path}: {detail}"),
            Error::Truncated {
                path,
                expected,
                got,
            } => write!(
                f,
                "truncated payload in {path}: expected {expected} elements, got {got}"
            ),
            Error::NonFinite { path, index } => {
                write!(f, "non-finite value in {path} at element {index}")
            }
            Error::InvalidConfig { detail } => write!(f, "invalid config: {detail}"),
            Error::DimensionMismatch { detail } => write!(f, "dimension mismatch: {detail}"),
            Error::SingularHessian { detail } => write!(f, "singular Hessian: {detail}"),
            Error::Singular { detail } => write!(f, "singular system: {detail}"),
            Error::OracleSize { detail } => write!(f, "oracle size guard: {detail}"),
            Error::Precondition { detail } => write!(f, "precondition violated: {detail}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}
