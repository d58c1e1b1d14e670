use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument `{field}`: {reason}")]
    InvalidArgument { field: &'static str, reason: String },

    #[error("stencil for {what} does not fit the grid: {reason}")]
    StencilTooWide { what: String, reason: String },

    #[error("box cover needs more than {budget} boxes to reach the requested coverage")]
    BoxBudgetExceeded { budget: usize },

    #[error("least-squares system is rank deficient: {0}")]
    RankDeficient(String),

    #[error("solver did not converge within {iterations} iterations (relative residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("optimizer diverged: {0}")]
    Diverged(String),

    #[error("unknown integrand `{0}`")]
    UnknownIntegrand(String),

    #[error("integrand registration check failed: {0}")]
    IntegrandCheck(String),

    #[error("integrand `{name}` lacks a finite p-growth bound")]
    MissingGrowth { name: String },

    #[error("query point lies outside the envelope table hull (coordinate {coordinate}: {value} not in [{min}, {max}])")]
    OutsideHull { coordinate: usize, value: f64, min: f64, max: f64 },

    #[error("tolerance {eps} is unattainable within the grid resolution: {reason}")]
    Unattainable { eps: f64, reason: String },

    #[error("container format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidArgument { field, reason: reason.into() }
}
