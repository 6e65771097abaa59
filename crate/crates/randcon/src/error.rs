//! Crate-wide error type.
//!
//! Every fallible operation returns [`Error`]. Variants are grouped by what
//! went wrong, not where: callers match on the kind of failure (bad input
//! shape, bad parameter, degenerate data, malformed file) rather than on the
//! module that raised it.

use std::path::PathBuf;

use thiserror::Error;

/// Alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Underlying I/O failure, annotated with the path involved.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A text cell that failed numeric parsing. Coordinates are 1-based
    /// positions in the file as the user sees it.
    #[error("parse error at row {row}, column {col}: {reason}")]
    ParseCell { row: usize, col: usize, reason: String },

    /// A row whose field count disagrees with the first row.
    #[error("ragged input: row {row} has {found} fields, expected {expected}")]
    RaggedRow { row: usize, expected: usize, found: usize },

    /// Array shapes that cannot be combined or violate a documented minimum.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A parameter outside its documented domain.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Input that is structurally valid but degenerate for the requested
    /// computation (all-identical samples, zero-norm vectors, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A container or config file that does not follow its format.
    #[error("format error: {0}")]
    Format(String),

    /// A container written by an incompatible serializer version.
    #[error("incompatible container version {found}, this build supports version {supported}")]
    Version { found: u32, supported: u32 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
