use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, PhdError>;

#[derive(Debug, Error)]
pub enum PhdError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error in field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("parse error in {source_name} at {location}: {message}")]
    Parse {
        source_name: String,
        location: String,
        message: String,
    },

    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("degenerate sample: every horizon is masked")]
    DegenerateSample,

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("missing dependency: {0}")]
    Dependency(String),

    #[error("config hash mismatch for {path}: checkpoint {found}, config {expected}")]
    HashMismatch {
        path: PathBuf,
        found: String,
        expected: String,
    },

    #[error("refusing to overwrite existing output {0} (pass --force)")]
    OutputExists(PathBuf),

    #[error("training aborted: {0}")]
    Training(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("plot error: {0}")]
    Plot(String),
}

impl PhdError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        PhdError::InvalidArgument(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PhdError::Io {
            path: path.into(),
            source,
        }
    }
}
