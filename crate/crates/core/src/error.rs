use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parameter out of domain: {0}")]
    Parameter(String),

    #[error("{name}({x}) is outside the domain {domain}")]
    Domain {
        name: &'static str,
        x: f64,
        domain: &'static str,
    },

    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("no closed-form smoothed form for {0}")]
    NotAvailable(String),

    #[error("iterate diverged at step {step} (phase {phase}): {reason}")]
    Diverged {
        step: u64,
        phase: usize,
        reason: String,
    },

    #[error("invalid plan: {0}")]
    InvalidPlan(String),

    #[error("no batch size reached the gradient threshold within {max_steps} steps")]
    ThresholdUnreachable { max_steps: u64 },

    #[error("unsupported sharpness query: {0}")]
    UnsupportedQuery(String),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}
