//! Error types shared across the solver library.

use thiserror::Error;

/// Errors raised by solvers and numerical kernels.
#[derive(Debug, Error)]
pub enum SolverError {
    /// An argument left the domain where an operation is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// A linear solve hit a (numerically) singular pivot.
    #[error("singular linear system at time level {level}: pivot {pivot:.3e}")]
    SingularSystem { level: usize, pivot: f64 },

    /// Newton iteration for a semilinear time step did not converge.
    #[error("Newton iteration failed at time level {level}: residual {residual:.3e} after {iterations} iterations")]
    NewtonDiverged {
        level: usize,
        residual: f64,
        iterations: usize,
    },

    /// Fixed-point iteration on a coupled optimality system stalled.
    #[error("coupled fixed-point iteration did not reach tolerance {tol:.3e}: last update {last_update:.3e} after {iterations} iterations")]
    FixedPointStalled {
        tol: f64,
        last_update: f64,
        iterations: usize,
    },

    /// Conjugate gradient failed to reduce the residual.
    #[error("conjugate gradient stagnated: relative residual {residual:.3e} after {iterations} iterations")]
    CgStagnated {
        residual: f64,
        iterations: usize,
        history: Vec<f64>,
    },

    /// The outer semilinear iteration is diverging; the data is too large
    /// for the local controllability regime.
    #[error("semilinear outer iteration diverging after {iterations} iterations (update {last_update:.3e}); try smaller initial data")]
    OuterDiverging {
        iterations: usize,
        last_update: f64,
    },

    /// Requested a configuration outside the supported regime.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Filesystem or formatting failure while writing reports.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SolverError>;
