use std::path::PathBuf;

/// Errors surfaced by every layer of the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value in {location}: {detail}")]
    Numerical { location: String, detail: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("parse error on line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("generation error: {0}")]
    Generation(String),

    #[error("I/O error on {}: {source}", path.display())]
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

    pub(crate) fn numerical(location: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numerical {
            location: location.into(),
            detail: detail.into(),
        }
    }
}
