use thiserror::Error;

pub type Result<T> = std::result::Result<T, AcxError>;

#[derive(Debug, Error)]
pub enum AcxError {
    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: String,
        expected: usize,
        got: usize,
    },

    #[error("invalid model specification: {0}")]
    InvalidSpec(String),

    #[error("invalid parameter space: {0}")]
    InvalidSpace(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "moving-average polynomial is not invertible (sum |alpha| + sum |beta| = {0:.6} >= 1)"
    )]
    NonInvertible(f64),

    #[error("stationarity check for r = {r} is not supported: {reason}")]
    UnsupportedOrder { r: f64, reason: String },

    #[error("non-finite value in the likelihood recursion at t = {t}")]
    NonFinite { t: usize },

    #[error("internal consistency failure during simulation at step {step}: {reason}")]
    Simulation { step: usize, reason: String },

    #[error("box too tight for a finite-difference step on component {component}")]
    BoxTooTight { component: usize },

    #[error("zero is outside the bounds of frozen component {component}")]
    InfeasibleFreeze { component: usize },

    #[error("every optimizer start failed to produce a finite likelihood")]
    AllStartsFailed,

    #[error("Hessian estimate is singular (condition number {condition:.3e})")]
    SingularHessian { condition: f64 },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("rank deficiency: {0}")]
    RankDeficient(String),

    #[error("every model in the collection failed to fit")]
    AllModelsFailed,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed data: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
