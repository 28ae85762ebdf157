use std::path::PathBuf;

/// Every failure the engine, data pipeline, trainer and CLI can report.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("construction error: {0}")]
    Construction(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("non-finite training loss at epoch {epoch}, batch {batch}: {value}")]
    NonFinite { epoch: usize, batch: usize, value: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
