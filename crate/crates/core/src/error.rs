use thiserror::Error;

/// Errors raised by the deblurring pipeline.
#[derive(Debug, Error)]
pub enum DeblurError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("channel error: {0}")]
    Channel(String),
    #[error("scale error: {0}")]
    Scale(String),
    #[error("patch index out of bounds: {0}")]
    Index(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("insufficient training data: {0}")]
    TrainingData(String),
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("neighbor count error: {0}")]
    Count(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("degenerate gradients: {0}")]
    DegenerateGradient(String),
    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },
    #[error("estimation failed at level {level}, iteration {iteration}: {source}")]
    Level {
        level: usize,
        iteration: usize,
        #[source]
        source: Box<DeblurError>,
    },
    #[error("image codec error: {0}")]
    Codec(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DeblurError>;
