use std::path::PathBuf;

use thiserror::Error;

use crate::simulator::Trajectory;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("kernel series did not reach tolerance {tol:e} within {max_order} terms")]
    Convergence { tol: f64, max_order: usize },

    #[error("{modes} sine modes are under-resolved on a grid of {nodes} nodes (need modes <= nodes/4)")]
    Resolution { modes: usize, nodes: usize },

    #[error("inadmissible decay rate-mode pair: 1 + a_{j} = {value:e} (a_{j} = {a:e})", value = 1.0 + .a)]
    Inadmissible { j: usize, a: f64 },

    #[error("transform inverse check failed: residual {residual:e} exceeds {tol:e}")]
    IllConditioned { residual: f64, tol: f64 },

    #[error("infeasible design: {0}")]
    Infeasible(String),

    #[error("alpha/nu = {ratio} coincides with eigenvalue lambda_{j} = {lambda}")]
    DegenerateSpectrum { ratio: f64, j: usize, lambda: f64 },

    #[error("linear solver failed: {0}")]
    Solver(String),

    #[error("Newton iteration did not converge in {iterations} iterations (last max|du| = {last:e})")]
    NewtonNonconvergence {
        iterations: usize,
        last: f64,
        history: Vec<f64>,
    },

    #[error("decay fit failed: {0}")]
    Fit(String),

    #[error("simulation aborted at time level {step}: {cause}")]
    Aborted {
        step: usize,
        cause: Box<Error>,
        partial: Box<Trajectory>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Inadmissible { .. } | Error::IllConditioned { .. } => 3,
            Error::Solver(_) | Error::NewtonNonconvergence { .. } | Error::Convergence { .. } => 4,
            Error::Aborted { cause, .. } => cause.exit_code(),
            Error::Io { .. } => 1,
            _ => 2,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}
