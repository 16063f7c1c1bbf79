use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use crate::split1d::Split1D;

/// Errors produced by the estimation pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("problem size {n} exceeds the configured cap of {cap}")]
    SizeCap { n: usize, cap: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("factorization broke down at pivot {pivot} (value {value:e})")]
    SingularFactorization { pivot: usize, value: f64 },

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("rank {rank} out of bounds for dimension {dim}")]
    RankOutOfBounds { rank: usize, dim: usize },

    #[error("split direction is zero")]
    ZeroDirection,

    #[error("direction is numerically outside the range of the covariance (lambda_psi = {lambda_psi:e})")]
    IllConditionedDirection { lambda_psi: f64 },

    #[error("quadrature did not converge: estimate {estimate}, error estimate {error:e}")]
    QuadratureNonConvergence { estimate: f64, error: f64 },

    #[error("split optimizer did not converge for N = {n} after all restarts")]
    SplitNotConverged { n: usize, best: Box<Split1D> },

    #[error("Newton solver failed after {iterations} iterations (residual {residual:e})")]
    NewtonDivergence { iterations: usize, residual: f64 },

    #[error("unsupported: {0}")]
    Unsupported(&'static str),

    #[error("eigensolver breakdown: {0}")]
    EigensolverBreakdown(&'static str),

    #[error("negative variance {0:e}")]
    NegativeVariance(f64),

    #[error("{} component(s) failed, first at index {}: {}", .0.len(), .0[0].0, .0[0].1)]
    ComponentFailures(Vec<(usize, Error)>),

    #[error("{failed} of {total} model evaluations failed")]
    TooManyFailures { failed: usize, total: usize },

    #[error("root bracket [{lo}, {hi}] does not contain a sign change")]
    BracketFailure { lo: f64, hi: f64 },

    #[error("tensor product of {size} components exceeds the cap of {cap}")]
    TensorCap { size: usize, cap: usize },

    #[error("mode {0} appears more than once")]
    DuplicateMode(usize),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
