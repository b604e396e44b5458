use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unknown task {0}")]
    UnknownTask(usize),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("finite-difference step must be positive, got {0}")]
    NonPositiveStep(f64),

    #[error("layout mismatch: {0}")]
    Layout(String),

    #[error("non-finite gain at task {0}")]
    NonFiniteGain(usize),

    #[error("weights are off the simplex: {0}")]
    OffSimplex(String),

    #[error("oracle limited to small K (2 <= K <= 4), got K = {0}")]
    OracleTooLarge(usize),

    #[error("task count mismatch: expected {expected}, got {got}")]
    TaskCount { expected: usize, got: usize },

    #[error("degenerate validation gradient")]
    DegenerateValidation,

    #[error("non-positive loss {0} in history")]
    NonPositiveLoss(f64),

    #[error("window too short: H = {0}, need at least 4")]
    WindowTooShort(usize),

    #[error("period {q} out of range [2, {h}]")]
    PeriodOutOfRange { q: usize, h: usize },

    #[error("invalid bid scale {0}")]
    InvalidBidScale(f64),

    #[error("policy produced non-finite action at step {0}")]
    NonFiniteAction(usize),

    #[error("empty split: {0}")]
    EmptySplit(&'static str),

    #[error("invalid split days: {0}")]
    SplitDays(String),

    #[error("task {0} missing in split")]
    TaskMissing(usize),

    #[error("divergence at iteration {0}")]
    Divergence(usize),

    #[error("degenerate correlation: {0}")]
    DegenerateCorrelation(String),

    #[error("alignment coverage violated; bound inapplicable (gamma_hat = {0})")]
    CoverageViolated(f64),

    #[error("undefined relative drop: baseline metric for task {0} is zero")]
    UndefinedRelativeDrop(usize),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
