use std::path::PathBuf;

use crate::features::FeatureSet;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("i/o error: {0}")]
    Stream(#[from] std::io::Error),

    #[error("pcap format error: {0}")]
    PcapFormat(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("packet at timestamp {timestamp_us} us arrives before {previous_us} us (reorder slack {slack_us} us)")]
    OutOfOrder {
        timestamp_us: u64,
        previous_us: u64,
        slack_us: u64,
    },

    #[error("training error: {0}")]
    Training(String),

    #[error("feature schema mismatch: model expects {expected}, got {found}")]
    SchemaMismatch {
        expected: FeatureSet,
        found: FeatureSet,
    },

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
