use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A dataset, pipeline, model or experiment configuration is invalid.
    #[error("configuration error: {0}")]
    Config(String),

    /// The caller passed arguments outside the operation's domain.
    #[error("usage error: {0}")]
    Usage(String),

    /// The requested power backend cannot be used on this host.
    #[error("power backend unavailable: {message}")]
    Capability { message: String },

    /// An engine invariant did not hold; results of the run must not be trusted.
    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("malformed input: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn capability(message: impl Into<String>) -> Self {
        Error::Capability {
            message: message.into(),
        }
    }
}
