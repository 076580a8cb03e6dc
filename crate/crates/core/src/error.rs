use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("backward requires a scalar loss, got shape {0:?}")]
    Rank(Vec<usize>),

    #[error("upsample target length must be positive")]
    EmptyTarget,

    #[error("haar low-pass needs at least 2 steps, got {0}")]
    TooShort(usize),

    #[error("{scales} wavelet scales need T >= {}, got T = {len}", 1usize << .scales)]
    ScaleLength { scales: usize, len: usize },

    #[error("expected {expected} driver channels, got {got}")]
    ChannelCount { expected: usize, got: usize },

    #[error("invalid calendar date: {0}")]
    Date(String),

    #[error("invalid distribution: {0}")]
    Distribution(String),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("{metric} is undefined: {reason}")]
    UndefinedMetric {
        metric: &'static str,
        reason: &'static str,
    },

    #[error("exact Shapley enumeration supports at most {max} groups, got {got}; use the sampled estimator")]
    TooManyGroups { got: usize, max: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("bad magic in {path}: expected {expected:?}")]
    BadMagic { path: PathBuf, expected: String },

    #[error("unsupported format version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },

    #[error("manifest/payload shape disagreement: {0}")]
    ShapeDisagreement(String),

    #[error("record {id} dated {date} falls outside every split range")]
    UnassignedRecord { id: String, date: chrono::NaiveDate },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
