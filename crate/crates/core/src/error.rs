use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("non-finite value in {tensor} at index {index}")]
    NonFinite { tensor: String, index: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid model: {0}")]
    ModelInvalid(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("{path}:{line}: {message}")]
    Text {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("trial keys differ between score sets; missing: {}", .missing.join(", "))]
    KeyMismatch { missing: Vec<String> },

    #[error("stage `{stage}` requires `{missing}` to have run first")]
    Dependency { stage: String, missing: String },

    #[error("stage directory is locked by another process: {0}")]
    Locked(PathBuf),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Text { .. } | Error::KeyMismatch { .. } => 2,
            Error::Dependency { .. } => 3,
            Error::NonFinite { .. } | Error::Numerical(_) | Error::Degenerate(_) => 4,
            _ => 1,
        }
    }
}
