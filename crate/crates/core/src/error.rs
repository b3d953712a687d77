use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Two points that must be distinct coincide, so a bearing is undefined.
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("at least 3 NLOS paths are required, got {found}")]
    InsufficientPaths { found: usize },

    /// Every importance weight is zero (or underflowed).
    #[error("degenerate weights: {0}")]
    DegenerateWeights(String),

    /// The circular mean of an orientation particle set is undefined.
    #[error("degenerate orientation: resultant length {resultant:e}")]
    DegenerateOrientation { resultant: f64 },

    #[error("singular least-squares system at trial orientation {alpha} rad")]
    SingularGeometry { alpha: f64 },

    #[error("estimation failed: {0}")]
    EstimationFailed(String),

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
