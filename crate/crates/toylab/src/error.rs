use thiserror::Error;

#[derive(Debug, Error)]
pub enum ToyError {
    #[error(transparent)]
    Core(#[from] duetsep_core::Error),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = ToyError> = std::result::Result<T, E>;

impl ToyError {
    pub fn io(path: impl Into<std::path::PathBuf>, source: std::io::Error) -> Self {
        ToyError::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable identifier for machine-readable diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            ToyError::Core(e) => e.kind(),
            ToyError::Shape(_) => "shape_mismatch",
            ToyError::Config(_) => "invalid_argument",
            ToyError::Diverged { .. } => "diverged",
            ToyError::Checkpoint(_) => "checkpoint",
            ToyError::Io { .. } => "io",
            ToyError::Json(_) => "json",
        }
    }
}
