//! Error type shared by all modules.

use std::fmt;

/// Everything that can go wrong inside the library.
///
/// Invariant violations carry the round index where they were detected so a
/// harness can abort with a useful diagnostic.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An argument had the wrong dimension.
    DimensionMismatch { expected: usize, got: usize },
    /// A precondition on the inputs was violated (non-PSD matrix, invalid
    /// simplex weights, malformed domain, ...).
    Contract(String),
    /// A rescaled loss or optimism left `[-1, 1]`; signals a mis-set scale.
    RangeViolation { what: &'static str, value: f64 },
    /// An iterative solve failed to converge or a bracket was not found.
    Numerical(String),
    /// Operations were called out of order (e.g. update without predict).
    Protocol(&'static str),
    /// A configuration was rejected during validation.
    Config(String),
    /// A derived constant failed its own post-hoc consistency check.
    Inconsistent(String),
    /// A runtime invariant failed mid-run.
    Invariant { round: usize, detail: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::RangeViolation { what, value } => {
                write!(f, "range violation: rescaled {what} = {value} leaves [-1, 1]")
            }
            Error::Numerical(msg) => write!(f, "numerical failure: {msg}"),
            Error::Protocol(msg) => write!(f, "protocol error: {msg}"),
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Inconsistent(msg) => write!(f, "internal consistency error: {msg}"),
            Error::Invariant { round, detail } => {
                write!(f, "invariant violation at round {round}: {detail}")
            }
        }
    }
}

impl std::error::Error for Error {}
