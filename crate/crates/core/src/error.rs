use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the core signal, metric and dataset routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("sample rate mismatch: {0} Hz vs {1} Hz")]
    SampleRateMismatch(u32, u32),

    #[error("wav error in {path}: {message}")]
    Wav { path: PathBuf, message: String },

    #[error("unsupported wav encoding: {0}")]
    UnsupportedEncoding(String),

    #[error("STFT window does not satisfy overlap-add for hop {hop}: squared-window sum varies by {spread:e}")]
    NotCola { hop: usize, spread: f64 },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("zero-energy signal: {0}")]
    ZeroEnergy(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable identifier used in machine-readable diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::SampleRateMismatch(..) => "sample_rate_mismatch",
            Error::Wav { .. } => "wav",
            Error::UnsupportedEncoding(_) => "unsupported_encoding",
            Error::NotCola { .. } => "not_cola",
            Error::Singular(_) => "singular",
            Error::ZeroEnergy(_) => "zero_energy",
            Error::Parse { .. } => "parse",
            Error::OutOfRange(_) => "out_of_range",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}
