use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("diffusion matrix is singular")]
    SingularSigma,

    #[error(
        "SurvivorDepletion: {survivors} survivors at t = {time}, at least {required} required"
    )]
    SurvivorDepletion {
        time: f64,
        survivors: usize,
        required: usize,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("TotalExtinction: every particle left the domain in the step ending at t = {time}")]
    TotalExtinction { time: f64 },

    #[error("ReinsertionBlowup: particle {particle} exceeded {cap} reinsertions")]
    ReinsertionBlowup { particle: usize, cap: usize },

    #[error("ContractionViolation: restart exit probability p = {p_hat} is not below 1")]
    ContractionViolation { p_hat: f64 },

    #[error("time grids do not match: {0}")]
    GridMismatch(String),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Stable short name used in CLI diagnostics.
    pub fn name(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::InvalidInput(_) => "InvalidInput",
            Error::SingularSigma => "SingularSigma",
            Error::SurvivorDepletion { .. } => "SurvivorDepletion",
            Error::Numerical(_) => "Numerical",
            Error::TotalExtinction { .. } => "TotalExtinction",
            Error::ReinsertionBlowup { .. } => "ReinsertionBlowup",
            Error::ContractionViolation { .. } => "ContractionViolation",
            Error::GridMismatch(_) => "GridMismatch",
            Error::Config(_) => "ConfigError",
        }
    }

    /// Input and configuration problems, as opposed to failures of the model run.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::DimensionMismatch { .. }
                | Error::InvalidInput(_)
                | Error::SingularSigma
                | Error::GridMismatch(_)
                | Error::Config(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
