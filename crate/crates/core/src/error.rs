use thiserror::Error;

/// Errors raised by the laboratory.
///
/// The variants fall into three groups that front ends map to distinct exit
/// codes: invalid input, a failed theory gate (assumptions, orientation,
/// hyperbolicity) and numerical failure.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("state {u:?} lies outside the ball of radius {radius}")]
    OutsideBall { u: Vec<f64>, radius: f64 },

    #[error("strict hyperbolicity fails at {u:?}: {reason}")]
    NotHyperbolic { u: Vec<f64>, reason: String },

    #[error("assumption check failed: {0}")]
    Assumption(String),

    #[error("orientation failure: gamma_ppp(0) = {0} must be positive")]
    Orientation(f64),

    #[error("numerical failure at t = {t}: {reason}")]
    Numeric { t: f64, reason: String },

    #[error("closed-form and numeric Riccati lifespans disagree: {closed} vs {numeric}")]
    RiccatiMismatch { closed: f64, numeric: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    TheoryGate,
    Numeric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::UnknownModel(_)
            | Error::InvalidParameter { .. }
            | Error::Config(_)
            | Error::Io(_)
            | Error::Json(_)
            | Error::Csv(_) => ErrorKind::Validation,
            Error::OutsideBall { .. }
            | Error::NotHyperbolic { .. }
            | Error::Assumption(_)
            | Error::Orientation(_) => ErrorKind::TheoryGate,
            Error::Numeric { .. } | Error::RiccatiMismatch { .. } => ErrorKind::Numeric,
        }
    }

    pub(crate) fn param(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.to_string(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
