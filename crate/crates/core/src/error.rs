use thiserror::Error;

/// Errors surfaced by the model, solvers and estimators.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("solver failed to converge: {0}")]
    Convergence(String),
    #[error("step size underflow at t = {t}; field too stiff for the requested tolerance")]
    Stiffness { t: f64 },
    #[error("time {t} outside trajectory horizon [0, {horizon}]")]
    OutOfHorizon { t: f64, horizon: f64 },
    #[error("empty observation window: {0}")]
    EmptyWindow(String),
    #[error("test-function contract violated: {0}")]
    Contract(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;
