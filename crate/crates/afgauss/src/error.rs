use thiserror::Error;

use crate::solver::SolveResult;

/// Errors surfaced by grid construction, linear solves, and the nonlinear solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("zeroth-order coefficient is not strictly positive (min c = {min_c:e})")]
    NonCoercive { min_c: f64 },

    #[error("linear solve did not reach tolerance (relative residual {rel_residual:e} after {iterations} iterations)")]
    LinearSolveFailure { rel_residual: f64, iterations: usize },

    #[error("quadratic differential too large on the truncation rim (max |phi|_h = {max_hnorm:e} >= 1/2)")]
    RimNormTooLarge { max_hnorm: f64 },

    #[error("iteration budget exhausted ({iterations} iterations, residual {residual:e})")]
    MaxItersExceeded { iterations: usize, residual: f64 },

    #[error("monotone iterate increased pointwise by {increase:e}")]
    MonotonicityViolated { increase: f64 },

    #[error("line search stalled after {halvings} halvings (residual {residual:e})")]
    LineSearchStalled { halvings: usize, residual: f64 },

    #[error("continuation stalled at s = {reached}")]
    ContinuationStalled {
        reached: f64,
        partial: Option<Box<SolveResult>>,
    },

    #[error("shape operator norm {shape_sup} is not below 1")]
    NotAlmostFuchsian { shape_sup: f64 },

    #[error("frame constraints drifted beyond tolerance (relative drift {drift:e})")]
    DriftExceeded { drift: f64 },

    #[error("segment scan is incomplete ({failed} of {total} solves failed)")]
    ScanIncomplete { failed: usize, total: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
