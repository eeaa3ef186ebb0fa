//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    InvalidParameter(String),

    #[error("non-finite value in {context} at index {index} (node {i1},{i2})")]
    NonFinite {
        context: String,
        index: usize,
        i1: usize,
        i2: usize,
    },

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("hypothesis {hypothesis} fails: {detail}")]
    HypothesisFailed { hypothesis: String, detail: String },

    #[error("iteration failed to converge: {context} (last residual {residual:.3e})")]
    ConvergenceFailure { context: String, residual: f64 },

    #[error("sign condition of the bifurcation branch violated: {0}")]
    BranchSide(String),

    #[error("Newton iterate left the positive branch at step {step}")]
    LeftPositiveBranch { step: usize },

    #[error("decomposition lost at t = {t}: {detail}")]
    DecompositionLost { t: f64, detail: String },

    #[error("modulation matrix degenerate (condition {cond:.3e})")]
    ModulationDegenerate { cond: f64 },

    #[error("conservation drift {drift:.3e} of {quantity} exceeds {limit:.3e} at t = {t}")]
    ConservationDrift {
        quantity: String,
        drift: f64,
        limit: f64,
        t: f64,
    },

    #[error("potential numerically zero: no support nodes above threshold")]
    EmptySupport,

    #[error("time regression: t = {t} after t = {t_prev}")]
    TimeRegression { t: f64, t_prev: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed snapshot file: {0}")]
    BadSnapshot(String),

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
