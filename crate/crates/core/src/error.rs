use thiserror::Error;

/// Errors produced anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is out of range or inconsistent.
    #[error("invalid configuration `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("format error: {0}")]
    Format(#[from] FormatError),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Ledger(#[from] LedgerMismatch),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

/// Malformed CIFAR-10 binary input.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatError {
    #[error("length {len} is not a multiple of {record} bytes (trailing record starts at offset {offset})")]
    Length {
        len: usize,
        record: usize,
        offset: usize,
    },
    #[error("record {record}: label byte {label} exceeds 9")]
    Label { record: usize, label: u8 },
}

/// A ledger entry that disagrees with the closed-form cost model.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error(
    "ledger mismatch at {location} ({direction}): expected {expected} bytes, recorded {actual}"
)]
pub struct LedgerMismatch {
    /// `round N` for a per-round entry, `total` for the summed check.
    pub location: String,
    pub direction: &'static str,
    pub expected: u64,
    pub actual: u64,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
