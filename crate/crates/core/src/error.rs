use thiserror::Error;

/// Errors raised by the model primitives, the discretization and the solver.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("argument {value} outside the domain of {what}")]
    Domain { what: &'static str, value: f64 },

    #[error("data rejected: positivity floor W = {w_floor} must be > 0")]
    DataRejected { w_floor: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("degenerate time step: {0}")]
    DegenerateStep(String),

    #[error("non-finite value produced while stepping {field} at t = {t}")]
    Integration { field: &'static str, t: f64 },

    #[error(
        "K floor violated at iterate {iter}, time index {t_index} (t = {t}): K = {k} < {floor}"
    )]
    KFloor {
        iter: usize,
        t_index: usize,
        t: f64,
        k: f64,
        floor: f64,
    },

    #[error(
        "positivity floor violated at iterate {iter}, t = {t}: min(y + f w) = {margin} < {floor}"
    )]
    PositivityFloor {
        iter: usize,
        t: f64,
        margin: f64,
        floor: f64,
    },

    #[error("support of {field} escaped [-{limit}, {limit}] at iterate {iter}, t = {t} (extent {extent})")]
    SupportEscape {
        field: &'static str,
        iter: usize,
        t: f64,
        extent: f64,
        limit: f64,
    },

    #[error("no convergence after {iters} iterations (last difference energy {energy:e})")]
    NonConvergence { iters: usize, energy: f64 },

    #[error("time step {dt} exceeds the stability limit {limit} at iterate {iter}")]
    Cfl { iter: usize, dt: f64, limit: f64 },

    #[error("particle {particle} left the wealth domain at step {step} (a = {a})")]
    ParticleEscape { particle: usize, step: usize, a: f64 },

    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for SolverError {
    fn from(e: std::io::Error) -> Self {
        SolverError::Io(e.to_string())
    }
}

impl From<csv::Error> for SolverError {
    fn from(e: csv::Error) -> Self {
        SolverError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, SolverError>;
