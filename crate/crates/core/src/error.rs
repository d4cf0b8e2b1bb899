//! Error types shared across the crate.

use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type.
#[derive(Debug)]
pub enum Error {
    /// Tensor or layer shapes do not line up.
    Dimension(String),
    /// Invalid configuration value (batch size, learning rate, ...).
    Config(String),
    /// Bad data fed to an operation (e.g. out-of-range label).
    Data(String),
    /// Malformed IDX dataset file.
    Idx(IdxError),
    Io(std::io::Error),
    /// Malformed checkpoint or metrics file.
    Format(String),
    /// Stale or mismatched forward cache.
    State(String),
    /// Non-finite value where a finite one is required.
    Numeric(String),
    /// Finite-difference oracle could not produce a verdict.
    Oracle(String),
}

/// Ingestion failures for the IDX file format, kept distinct so callers
/// (and tests) can tell exactly how a file is broken.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IdxError {
    BadMagic {
        path: String,
        expected: u32,
        found: u32,
    },
    Truncated {
        path: String,
        expected_bytes: u64,
        found_bytes: u64,
    },
    CountMismatch {
        images: usize,
        labels: usize,
    },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension(m) => write!(f, "dimension error: {m}"),
            Error::Config(m) => write!(f, "configuration error: {m}"),
            Error::Data(m) => write!(f, "data error: {m}"),
            Error::Idx(e) => write!(f, "ingestion error: {e}"),
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::Format(m) => write!(f, "format error: {m}"),
            Error::State(m) => write!(f, "state error: {m}"),
            Error::Numeric(m) => write!(f, "numeric error: {m}"),
            Error::Oracle(m) => write!(f, "oracle error: {m}"),
        }
    }
}

impl fmt::Display for IdxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IdxError::BadMagic {
                path,
                expected,
                found,
            } => write!(f, "{path}: bad magic number {found} (expected {expected})"),
            IdxError::Truncated {
                path,
                expected_bytes,
                found_bytes,
            } => write!(
                f,
                "{path}: truncated file, expected {expected_bytes} bytes of payload, found {found_bytes}"
            ),
            IdxError::CountMismatch { images, labels } => write!(
                f,
                "image/label count mismatch: {images} images vs {labels} labels"
            ),
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

impl From<IdxError> for Error {
    fn from(e: IdxError) -> Self {
        Error::Idx(e)
    }
}
