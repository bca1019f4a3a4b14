use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Errors raised by the pure pipeline.
#[derive(Clone, Debug, PartialEq)]
pub enum Error {
    /// Array extents disagree with what an operation needs.
    Dimension(String),
    /// Input is well-shaped but mathematically degenerate (zero norm, too few points).
    Degenerate(String),
    /// A configuration value violates its invariant.
    Config(String),
    /// A frame index or count falls outside its valid range.
    Index(String),
    /// Data failed validation (non-finite values, inconsistent fields).
    Data(String),
    /// An oracle call failed.
    Oracle(OracleError),
    /// Every sample of a training run was skipped.
    Run(String),
    /// An internal invariant was broken.
    Internal(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension(m) => write!(f, "dimension error: {m}"),
            Error::Degenerate(m) => write!(f, "degenerate input: {m}"),
            Error::Config(m) => write!(f, "config error: {m}"),
            Error::Index(m) => write!(f, "index error: {m}"),
            Error::Data(m) => write!(f, "data error: {m}"),
            Error::Oracle(e) => write!(f, "oracle error: {e}"),
            Error::Run(m) => write!(f, "run error: {m}"),
            Error::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl core::error::Error for Error {}

impl From<OracleError> for Error {
    fn from(e: OracleError) -> Self {
        Error::Oracle(e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OracleErrorKind {
    UnknownSample,
    /// Replay cache has no stored value for the request.
    Miss,
    /// The oracle cannot answer this kind of sequence at all.
    Unsupported,
    InvalidSequence,
    Timeout,
    Transport,
    Protocol,
    Status,
}

/// Failure of a single oracle request, carrying the request context.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleError {
    pub kind: OracleErrorKind,
    pub message: String,
}

impl OracleError {
    pub fn new(kind: OracleErrorKind, message: impl Into<String>) -> Self {
        OracleError {
            kind,
            message: message.into(),
        }
    }
}

impl fmt::Display for OracleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.kind, self.message)
    }
}

impl core::error::Error for OracleError {}
