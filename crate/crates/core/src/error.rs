use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    #[error("a subgradient witness is required: {0}")]
    WitnessRequired(String),

    #[error("step {step} failed after {iterations} iterations (residual {residual:.3e}): {reason}")]
    StepFailure {
        step: usize,
        iterations: usize,
        residual: f64,
        reason: String,
    },

    #[error("time {t} lies outside [0, {horizon}]")]
    Domain { t: f64, horizon: f64 },

    #[error("infeasible transition: {0}")]
    InfeasibleTransition(String),

    #[error("no transition: {0}")]
    NoTransition(String),

    #[error("parameterized curve does not cover [0, {horizon}] (reaches {reached})")]
    DomainIncomplete { horizon: f64, reached: f64 },

    #[error("grid functions live on different grids")]
    GridMismatch,

    #[error("output error: {0}")]
    Output(String),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Output(e.to_string())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Output(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
