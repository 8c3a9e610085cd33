use std::path::PathBuf;

/// Crate-wide error type. Numeric routines that can legitimately fail
/// (non-PD factorizations, degenerate clouds) get their own variants so
/// callers can branch on them instead of string-matching.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty point cloud")]
    EmptyCloud,

    #[error("degenerate cloud: zero scale after centering")]
    ZeroScale,

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("matrix not positive definite (jitter escalation exhausted at {jitter:.3e})")]
    NotPositiveDefinite { jitter: f64 },

    #[error("bad checkpoint {path}: {msg}")]
    BadCheckpoint { path: PathBuf, msg: String },

    #[error("manifest error: {0}")]
    Manifest(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
