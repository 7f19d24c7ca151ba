use thiserror::Error;

/// Unified error type for the crate.
#[derive(Error, Debug)]
pub enum Error {
    /// Shape or size disagreement between two values that must match.
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    /// A scalar or enum argument outside its documented range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A malformed or self-contradictory experiment configuration.
    #[error("invalid config: {0}")]
    Config(String),

    /// An operation requested from a component that cannot provide it,
    /// e.g. an analytic gradient of a black-box objective.
    #[error("capability not available: {0}")]
    Capability(String),

    /// Malformed input data (pixel values out of range, bad labels, ...).
    #[error("invalid data: {0}")]
    Data(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: {detail}")]
    TrainingDiverged { epoch: usize, detail: String },

    /// An attack optimizer produced a non-finite objective.
    #[error("optimization diverged at iteration {iteration}")]
    OptimizationDiverged { iteration: usize },

    /// A binary container or checkpoint that does not parse.
    #[error("malformed container: {0}")]
    Container(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml error: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Error::DimensionMismatch {
            expected: expected.into(),
            actual: actual.into(),
        }
    }
}
