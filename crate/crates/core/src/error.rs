use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("bad magic at offset 0: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} at offset 4 (expected {expected})")]
    UnsupportedVersion { expected: u32, found: u32 },

    #[error("truncated payload: needed {needed} bytes at offset {offset}, only {available} available")]
    Truncated { offset: u64, needed: u64, available: u64 },

    #[error("{count} trailing bytes after payload at offset {offset}")]
    TrailingBytes { offset: u64, count: u64 },

    #[error("non-finite value {value} in block {block}, row {row}, col {col} (byte offset {offset})")]
    NonFinite {
        block: usize,
        row: usize,
        col: usize,
        value: f64,
        offset: u64,
    },

    #[error("code {record} has nonzero pad bits beyond bit {bits} (byte offset {offset})")]
    NonzeroPadBits { record: usize, bits: usize, offset: u64 },

    #[error("invalid header field {field} at offset {offset}: {message}")]
    InvalidHeader {
        field: &'static str,
        offset: u64,
        message: String,
    },

    #[error("duplicate item id {0}")]
    DuplicateId(u64),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite input in {0}")]
    NonFiniteInput(&'static str),

    #[error("backward pass requires the pre-activations retained by forward")]
    MissingActivations,

    #[error("instance is within the kink-exclusion margin: {0}")]
    KinkViolation(String),

    #[error("rotation loss needs at least one rotation block (feature set has R = 0)")]
    NoRotations,

    #[error("non-finite loss term {term} at epoch {epoch}")]
    NonFiniteLoss { term: &'static str, epoch: usize },

    #[error("training diverged at epoch {epoch}: total loss {total} exceeds 1e6 x initial {initial}")]
    Diverged { epoch: usize, total: f64, initial: f64 },

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
