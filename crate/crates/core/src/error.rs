use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension { what: &'static str, expected: usize, got: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("unknown body index {0}")]
    UnknownBody(usize),

    #[error("unsupported geometry pair: {0} vs {1}")]
    UnsupportedPair(&'static str, &'static str),

    #[error("mass matrix is not positive definite")]
    SingularMass,

    #[error("sliding contact {contact} is degenerate (slip or impulse magnitude {scale:e}); reclassify it as breaking or sticking")]
    SingularMode { contact: usize, scale: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("scene error at {path}: {message}")]
    Scene { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(SimError::Dimension { what, expected, got })
    }
}
