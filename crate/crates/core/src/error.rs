use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported tensor file version {0}")]
    UnsupportedVersion(u16),
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),
    #[error("truncated header")]
    TruncatedHeader,
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("trailing bytes after payload: {0}")]
    TrailingBytes(usize),
    #[error("dimension overflow: {0}")]
    DimensionOverflow(String),
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("json error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("empty setting: {0}")]
    EmptySetting(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("insufficient bank size: need {needed} rows (K={k}, start_index={start_index}), bank has {available}")]
    InsufficientBankSize {
        needed: usize,
        k: usize,
        start_index: usize,
        available: usize,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("missing score for record {0}")]
    MissingScore(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// Stable machine-readable name of the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::BadMagic { .. } => "bad_magic",
            Error::UnsupportedVersion(_) => "unsupported_version",
            Error::UnsupportedDtype(_) => "unsupported_dtype",
            Error::TruncatedHeader => "truncated_header",
            Error::TruncatedPayload { .. } => "truncated_payload",
            Error::TrailingBytes(_) => "trailing_bytes",
            Error::DimensionOverflow(_) => "dimension_overflow",
            Error::InvalidShape(_) => "invalid_shape",
            Error::Manifest(_) => "invalid_manifest",
            Error::Json { .. } => "json",
            Error::EmptySetting(_) => "empty_setting",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InsufficientBankSize { .. } => "insufficient_bank_size",
            Error::InvalidConfig(_) => "invalid_config",
            Error::UndefinedMetric(_) => "undefined_metric",
            Error::MissingScore(_) => "missing_score",
        }
    }
}
