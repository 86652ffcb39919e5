use thiserror::Error;

/// Errors surfaced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("frequency {0} rad/sample is outside [0, pi]")]
    FrequencyDomain(f64),
    #[error("invalid filter: {0}")]
    InvalidFilter(String),
    #[error("invalid band [{lo}, {hi}]: {reason}")]
    InvalidBand { lo: f64, hi: f64, reason: String },
    #[error("frequency grid has no points inside [{lo}, {hi}]")]
    EmptyGridBand { lo: f64, hi: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("undeclared variable id {0}")]
    UndeclaredVariable(usize),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("invalid design specification: {0}")]
    InvalidSpec(String),
    #[error("design infeasible: {0}")]
    Infeasible(String),
    #[error("Run into numerical problems: {0}")]
    NumericalTrouble(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("unstable closed loop: spectral radius {0} >= 1")]
    Unstable(f64),
    #[error("invalid quantizer: {0}")]
    InvalidQuantizer(String),
    #[error("invalid signal: {0}")]
    InvalidSignal(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
