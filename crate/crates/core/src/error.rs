use thiserror::Error;

use crate::model::StateVec;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Invalid parameter, non-finite input, or an inadmissible history.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("no endemic equilibrium: R0 = {r0} <= 1")]
    NoEndemicEquilibrium { r0: f64 },

    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    ConvergenceFailure {
        iterations: usize,
        residual: f64,
        last: StateVec,
    },

    #[error("grid error: {0}")]
    Grid(String),

    #[error("integration produced a non-finite state at t = {t}")]
    Blowup { t: f64 },

    #[error("time {t} outside trajectory domain [{lo}, {hi}]")]
    Range { t: f64, lo: f64, hi: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),
}
