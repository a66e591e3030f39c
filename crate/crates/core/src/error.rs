use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("signal too short: {len} samples, one frame needs {frame_len}")]
    SignalTooShort { len: usize, frame_len: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate vector: zero L2 norm")]
    DegenerateVector,

    #[error("negative entry {value} at index {index}")]
    NegativeEntry { index: usize, value: f64 },

    #[error("non-finite entry at index {0}")]
    NonFinite(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("silent frame")]
    SilentFrame,

    #[error(
        "insufficient training data: {needed} atoms requested, {available} features available"
    )]
    InsufficientTrainingData { needed: usize, available: usize },

    #[error("metadata mismatch: {0}")]
    MetaMismatch(String),

    #[error("sample rate mismatch: dictionary {dictionary} Hz, input {input} Hz")]
    SampleRateMismatch { dictionary: u32, input: u32 },

    #[error("not a dictionary file")]
    NotADictionaryFile,

    #[error("parse error at byte offset {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("source too short: {0}")]
    SourceTooShort(String),

    #[error("inconsistent sample rates: {0}")]
    InconsistentSampleRate(String),

    #[error("band [{low}, {high}] Hz outside Nyquist {nyquist} Hz")]
    BandOutsideNyquist { low: f64, high: f64, nyquist: f64 },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Wav { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
