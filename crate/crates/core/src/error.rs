use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // corpus
    #[error("line {line}: record {record:?} is missing field `{field}`")]
    MissingField {
        record: String,
        line: usize,
        field: &'static str,
    },
    #[error("duplicate id {id:?} at line {line}")]
    DuplicateId { id: String, line: usize },
    #[error("line {line}: record {record:?} has unknown label {label:?}")]
    UnknownLabel { record: String, line: usize, label: String },
    #[error("line {line}: record {record:?}: {reason}")]
    InvalidRecord {
        record: String,
        line: usize,
        reason: String,
    },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("need at least {k} distinct events, found {found}")]
    TooFewEvents { k: usize, found: usize },
    #[error("invalid split: {0}")]
    InvalidSplit(String),

    // encoders
    #[error("encoder backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("modality {modality} not supported by encoder {encoder_id}")]
    UnsupportedModality { modality: String, encoder_id: String },
    #[error("cache entry {key:?} is corrupt: {reason}")]
    CacheCorrupt { key: String, reason: String },
    #[error("feature sequence rejected: {0}")]
    InvalidFeature(String),

    // augment / chain of debunk
    #[error("LLM failure after {attempts} attempts ({stage}): {reason}")]
    LlmFailure {
        stage: String,
        attempts: usize,
        reason: String,
    },
    #[error("prompt template missing: {0}")]
    PromptTemplateMissing(String),
    #[error("pool has {available} debunk texts, need {target}")]
    InsufficientPool { available: usize, target: usize },
    #[error("title is empty")]
    EmptyTitle,
    #[error("chain-of-debunk record {item_id:?} has {runs} runs, expected {expected}")]
    IncompleteRecord {
        item_id: String,
        runs: usize,
        expected: usize,
    },

    // models
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("time {0} outside [0, 1]")]
    TimeOutOfRange(f64),
    #[error("schedule underflow at t={t}: sqrt(1-gamma) = {value:e}")]
    ScheduleUnderflow { t: f64, value: f64 },
    #[error("missing feature: {0}")]
    MissingFeature(&'static str),
    #[error("loss weight {name} is negative ({value})")]
    NegativeWeight { name: &'static str, value: f64 },

    // harness
    #[error("non-finite loss in batch {batch} of epoch {epoch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("checkpoint fingerprint {found} does not match config fingerprint {expected}")]
    FingerprintMismatch { expected: String, found: String },
    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Candle(#[from] candle_core::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
