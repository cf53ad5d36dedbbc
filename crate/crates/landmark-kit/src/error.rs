use std::fmt;
use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by landmark-kit operations.
#[derive(Debug)]
pub enum Error {
    /// Spatial dimensionality of two inputs disagrees.
    DimensionMismatch {
        expected: usize,
        got: usize,
    },
    /// Array/grid shapes disagree where they must match.
    ShapeMismatch(String),
    /// A parameter violates its documented precondition.
    InvalidParameter(String),
    /// Affine linear block is not invertible.
    SingularMatrix,
    /// No finite result exists for this input (e.g. all-nonpositive heatmap
    /// under a normalizing activation). Carries the channel it occurred in.
    DegenerateInput {
        channel: usize,
        reason: String,
    },
    /// A gradient or loss value became non-finite.
    NonFinite(String),
    /// Undefined aggregate (e.g. SDR of an empty error set).
    UndefinedResult(String),
    /// Malformed file contents, with the byte offset where parsing failed.
    Format {
        offset: u64,
        reason: String,
    },
    /// Malformed CSV row.
    Csv {
        line: usize,
        reason: String,
    },
    /// Malformed or inconsistent manifest.
    Manifest(String),
    /// A file referenced by a manifest entry could not be loaded.
    Entry {
        id: String,
        reason: String,
    },
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    Json(serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(offset: u64, reason: impl Into<String>) -> Self {
        Error::Format {
            offset,
            reason: reason.into(),
        }
    }

    /// True for errors arising from numeric degeneracy rather than bad data
    /// or bad files. The CLI maps these to a distinct exit code.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::SingularMatrix
                | Error::DegenerateInput { .. }
                | Error::NonFinite(_)
                | Error::UndefinedResult(_)
        )
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}-d, got {got}-d")
            }
            Error::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
            Error::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
            Error::SingularMatrix => write!(f, "singular affine matrix"),
            Error::DegenerateInput { channel, reason } => {
                write!(f, "degenerate input in channel {channel}: {reason}")
            }
            Error::NonFinite(msg) => write!(f, "non-finite value: {msg}"),
            Error::UndefinedResult(msg) => write!(f, "undefined result: {msg}"),
            Error::Format { offset, reason } => {
                write!(f, "format error at byte {offset}: {reason}")
            }
            Error::Csv { line, reason } => write!(f, "csv error at line {line}: {reason}"),
            Error::Manifest(msg) => write!(f, "manifest error: {msg}"),
            Error::Entry { id, reason } => write!(f, "entry '{id}': {reason}"),
            Error::Io { path, source } => write!(f, "io error on {}: {source}", path.display()),
            Error::Json(e) => write!(f, "json error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            Error::Json(e) => Some(e),
            _ => None,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e)
    }
}
