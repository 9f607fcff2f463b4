use thiserror::Error;

/// Errors shared across the crate.
///
/// Anything statistical that can fail for a *data-dependent* reason (bound
/// violations, missing cache entries, degenerate series) gets its own variant
/// so callers can distinguish a bug from a bad configuration.
#[derive(Debug, Error)]
pub enum Error {
    #[error("datum index {index} out of range for dataset of {len} points")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: &'static str },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(
        "lower bound exceeds likelihood at datum {index}: log bound {log_bound} > log likelihood {log_lik}"
    )]
    BoundViolation {
        index: usize,
        log_lik: f64,
        log_bound: f64,
    },

    #[error("{op} expects a {expected} model but got {got}")]
    FamilyMismatch {
        op: &'static str,
        expected: &'static str,
        got: &'static str,
    },

    #[error("no cached likelihood for bright datum {index}; the cache must cover the bright set")]
    MissingBrightCache { index: usize },

    #[error("collapsed statistic would be {p}x{p} ({bytes} bytes), over the in-memory limit")]
    StatisticTooLarge { p: usize, bytes: usize },

    #[error("optimizer produced a non-finite objective at epoch {epoch}; reduce the step size")]
    DivergentOptimization { epoch: usize },

    #[error("slice sampler interval shrank to a point after {0} rejections")]
    SliceShrinkageCollapse(usize),

    #[error("series is constant; effective sample size is undefined")]
    ZeroVariance,

    #[error("series of length {len} is too short for this diagnostic (need at least {min})")]
    SeriesTooShort { len: usize, min: usize },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
