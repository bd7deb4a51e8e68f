use thiserror::Error;

pub type Result<T> = std::result::Result<T, FnaError>;

#[derive(Debug, Error)]
pub enum FnaError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("insufficient pilot: arm {arm} has {count} observation(s), at least 2 required")]
    InsufficientPilot { arm: String, count: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Too many pilots (or bootstrap resamples) had a zero variance estimate.
    #[error("degenerate data: {0}")]
    Degenerate(String),

    /// The requested approximation does not apply to this distribution.
    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl FnaError {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        FnaError::InvalidParameter(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        FnaError::InvalidInput(msg.into())
    }

    /// True for refusals caused by the data rather than by the caller.
    pub fn is_degenerate(&self) -> bool {
        matches!(self, FnaError::Degenerate(_))
    }
}
