use thiserror::Error;

#[derive(Debug, Error)]
pub enum WorkbenchError {
    #[error(transparent)]
    Core(#[from] flowlenia::Error),
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error("mass conservation violated at step {step}: relative drift {drift:e} exceeds {tolerance:e}")]
    Conservation { step: u64, drift: f64, tolerance: f64 },
    #[error("{0}")]
    Usage(String),
}

impl WorkbenchError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            WorkbenchError::Conservation { .. } => 3,
            WorkbenchError::Usage(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = WorkbenchError> = std::result::Result<T, E>;

/// Attaches the path to an I/O error.
pub(crate) fn io<T>(result: std::io::Result<T>, path: &std::path::Path) -> Result<T> {
    result.map_err(|source| WorkbenchError::Io {
        context: path.display().to_string(),
        source,
    })
}
