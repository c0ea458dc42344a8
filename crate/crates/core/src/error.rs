use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong inside the engine.
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
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("unsupported dtype tag {0}")]
    UnsupportedDtype(u8),
    #[error("truncated header")]
    TruncatedHeader,
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: u64, found: u64 },
    #[error("layer boundaries must start at 0, be strictly increasing and < C: {0:?}")]
    NonMonotonicBoundaries(Vec<u32>),
    #[error("tensor dimensions must all be >= 1, got {0:?}")]
    ZeroDim([usize; 3]),
    #[error("dimension {0} does not fit in 32 bits")]
    DimOverflow(usize),
    #[error("buffer length {len} does not match dims {dims:?}")]
    BufferMismatch { len: usize, dims: [usize; 3] },

    #[error("manifest: duplicate id {0:?}")]
    DuplicateId(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("missing feature file for id {id:?} at {path}")]
    MissingFeature { id: String, path: PathBuf },
    #[error("unknown id {0:?}")]
    UnknownId(String),

    #[error("model artifact checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("unknown detector tag {0}")]
    UnknownDetector(u8),
    #[error("malformed model artifact: {0}")]
    MalformedArtifact(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("need at least {needed} training tensors, got {got}")]
    NotEnoughSamples { needed: usize, got: usize },
    #[error("cholesky factorization failed at location {location} (epsilon too small?)")]
    Cholesky { location: usize },
    #[error("single-class input: both normal and anomalous labels are required")]
    SingleClass,
    #[error("no positive labels")]
    NoPositives,
    #[error("insufficient anomalies: need {needed}, only {available} available")]
    InsufficientAnomalies { needed: usize, available: usize },

    #[error("backbone: {0}")]
    Backbone(String),
    #[error("image: {0}")]
    Image(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
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
