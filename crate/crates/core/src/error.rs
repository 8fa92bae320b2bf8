use std::path::PathBuf;

/// Errors produced by the denoising library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),

    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),

    #[error("empty audio buffer")]
    EmptyBuffer,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("buffer of {len} samples is shorter than the {window}-sample window")]
    BufferTooShort { len: usize, window: usize },

    #[error("invalid STFT parameters: {0}")]
    InvalidParams(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("empty input matrix")]
    EmptyInput,

    #[error("batch of {m} columns is wider than the {n}-column spectrogram")]
    BatchTooWide { m: usize, n: usize },

    #[error("aggregated statistics are all zero; no dictionary update is defined")]
    DegenerateState,

    #[error("length mismatch: {what} has {got} samples, expected {expected}")]
    LengthMismatch {
        what: String,
        got: usize,
        expected: usize,
    },

    #[error("reference signal is identically zero")]
    ZeroReference,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("malformed dictionary file: {0}")]
    BadDictionary(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures caused by the numerics rather than by the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::DegenerateState)
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
