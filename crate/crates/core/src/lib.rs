//! Finite-horizon heterogeneous-agent wealth model with an endogenous interest
//! rate: a forward equation for the wealth/income density `g`, a backward
//! equation for the marginal value `y`, and the rate `r = P / K` that keeps
//! `Q = int (z + H_p) g` constant, solved by a frozen-coefficient Picard
//! iteration on a cutoff problem.

pub mod config;
pub mod coupling;
pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod grid;
pub mod model;
pub mod oracle;
pub mod tolerances;

pub use config::{Problem, RunConfig};
pub use coupling::{
    functional_k, functional_p, interest_rate, moment_c, moment_q, picard_solve, IterationReport, IterationState,
    PicardOptions,
};
pub use diagnostics::{q_data, run_invariant_suite, InvariantReport, MomentSeries};
pub use dynamics::{cfl_dt, step_g_forward, step_y_backward, Discretization, FieldPath, ScalarPath, TimeGrid};
pub use error::{Result, SolverError};
pub use grid::{Field, Grid2D};
pub use model::{compute_floors, Crra, CutoffSpec, IncomeProcess, Model, ModelConfig, PolynomialIncome, Utility};
pub use oracle::{oracle_agreement, run_oracle, OracleOptions, OracleRun};
