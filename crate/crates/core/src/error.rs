//! Error type shared by every module in the crate.

use thiserror::Error;

/// Everything that can go wrong while building designs, fitting, or selecting
/// bandwidths. Variants carry just enough context to act on programmatically.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A configuration value is out of range or inconsistent.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A custom kernel table failed validation at construction.
    #[error("invalid kernel table: {0}")]
    InvalidKernel(String),

    /// No observation received positive kernel weight at the requested
    /// bandwidth, so there is nothing to fit.
    #[error("empty estimation window: no observation has positive kernel weight")]
    EmptyWindow,

    /// Fewer observations than the fit needs.
    #[error("insufficient data: need at least {needed} usable observations, got {got}")]
    InsufficientData { needed: usize, got: usize },

    /// The weighted Gram matrix is numerically singular.
    #[error("singular design: reciprocal condition number {rcond:.3e} below threshold")]
    Singular { rcond: f64 },

    /// The global polynomial pilot regression could not be solved.
    #[error("pilot polynomial fit is singular or under-determined")]
    PilotSingular,

    /// A leverage value reached one, so HC2/HC3 weighting is undefined.
    #[error("leverage {leverage:.6} at observation {index} makes the requested variance weighting undefined")]
    LeverageOne { index: usize, leverage: f64 },

    /// A Studentized statistic was requested with a zero standard error.
    #[error("standard error is zero; the t statistic is undefined")]
    ZeroSe,

    /// The estimated bias constant vanishes, leaving the trade-off objective
    /// without a minimizer.
    #[error("estimated bias constant is numerically zero; trade-off objective is flat")]
    DegenerateBias,

    /// Numerical integration produced a non-finite value.
    #[error("numerical integration failed: {0}")]
    IntegrationFailure(String),
}

pub type Result<T> = std::result::Result<T, Error>;
