use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: class id {id} is not in the semantic scheme")]
    UnknownClass { line: usize, id: i64 },

    #[error("invalid semantic scheme: {0}")]
    Scheme(String),

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("all points are coincident; bounding box has zero extent")]
    DegenerateExtent,

    #[error("{0}")]
    Domain(String),

    #[error("requested {k} neighbours but the cloud has only {available} points")]
    InsufficientPoints { k: usize, available: usize },

    #[error("point cloud `{0}` carries no semantic labels")]
    MissingLabels(String),

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("descriptor kind mismatch: expected {expected}, got {found}")]
    KindMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("{0} is not supported")]
    NotSupported(&'static str),

    #[error("histogram binning mismatch: {0}")]
    Binning(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("class vocabulary mismatch: {0}")]
    Vocabulary(String),

    #[error("incompatible configurations: {0}")]
    IncompatibleConfig(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed signature: {0}")]
    Format(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

/// Coarse error classes, used by the CLI to choose an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Io,
    Internal,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io { .. } => ErrorClass::Io,
            Error::Invariant(_) => ErrorClass::Internal,
            _ => ErrorClass::Validation,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
