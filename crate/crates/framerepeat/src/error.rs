use std::path::PathBuf;

use framerepeat_core::{OracleError, OracleErrorKind};

/// Why a sample directory could not be loaded.
#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("missing file {0}")]
    Missing(PathBuf),
    #[error("{path}: malformed manifest: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error("{path}: unsupported format version {found}")]
    Version { path: PathBuf, found: u32 },
    #[error("{blob}: expected {expected} bytes, found {actual}")]
    ByteLength { blob: PathBuf, expected: u64, actual: u64 },
    #[error("{blob}: non-finite value at element {index}")]
    NonFinite { blob: PathBuf, index: usize },
    #[error("{blob}: similarity {value} at frame {index} outside [-1, 1]")]
    SimilarityRange { blob: PathBuf, index: usize, value: f64 },
    #[error("{path}: {source}")]
    Invariant {
        path: PathBuf,
        source: framerepeat_core::Error,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] framerepeat_core::Error),
    #[error("oracle: {0}")]
    Oracle(#[from] OracleError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format { path: path.into(), message: message.into() }
    }

    /// Process exit status: 1 usage or config, 2 data, 3 oracle or
    /// transport, 4 internal invariant violation.
    pub fn exit_code(&self) -> i32 {
        use framerepeat_core::Error as C;
        match self {
            Error::Usage(_) => 1,
            Error::Io { .. } | Error::Load(_) | Error::Format { .. } => 2,
            Error::Oracle(_) => 3,
            Error::Core(e) => match e {
                C::Config(_) => 1,
                C::Oracle(_) => 3,
                C::Internal(_) => 4,
                // every sample skipped; in practice the oracle failed them
                C::Run(_) => 3,
                _ => 2,
            },
        }
    }
}

pub(crate) fn oracle_error(kind: OracleErrorKind, message: impl Into<String>) -> OracleError {
    OracleError::new(kind, message.into())
}
