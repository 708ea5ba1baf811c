use std::path::PathBuf;

/// Errors produced by loading, matching and metric computation.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("failed to read or write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    /// Input parsed but violates the documented schema.
    #[error("schema violation: {0}")]
    Schema(String),

    /// Arguments outside an operation's domain.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A metric or statistic that has no defined value on the given data.
    #[error("{0}")]
    Undefined(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
