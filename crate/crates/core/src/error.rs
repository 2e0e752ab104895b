use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("size mismatch: expected {expected} values, got {actual}")]
    SizeMismatch { expected: usize, actual: usize },

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("invalid kernel profile: {0}")]
    InvalidProfile(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error(
        "kernel annulus under-resolved: (b-a)*eps = {annulus:.4e} covers {cells:.2} cells, \
         need {min_cells}; use N >= {required_n}"
    )]
    ResolutionGuard {
        annulus: f64,
        cells: f64,
        min_cells: f64,
        required_n: usize,
    },

    #[error("eps = {eps} too large: need eps < extent/2 = {limit}")]
    EpsTooLarge { eps: f64, limit: f64 },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("positivity floor violated: species {species}, point {index}, value {value:e}")]
    PositivityFloor {
        species: usize,
        index: usize,
        value: f64,
    },

    #[error("conjugate gradients did not converge in {iterations} iterations (relative residual {residual:e})")]
    CgNonConvergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("entropy minimization did not converge in {iterations} iterations (residual {residual:e})")]
    S2NonConvergence { iterations: usize, residual: f64 },

    #[error("implicit step did not converge at t = {time}: {reason}")]
    StepFailure { time: f64, reason: String },

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("config: {0}")]
    Validation(String),

    #[error("snapshot {path}: {message}")]
    Snapshot { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Solver failures map to exit code 2, everything caught before compute to 1.
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self,
            Error::CgNonConvergence { .. }
                | Error::S2NonConvergence { .. }
                | Error::StepFailure { .. }
                | Error::PositivityFloor { .. }
        )
    }
}
