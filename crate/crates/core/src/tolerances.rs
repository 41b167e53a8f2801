//! Pinned tolerances shared by the invariant checks, the solver and the tests.

/// Mass drift allowed for `int g(t)`.
pub const MASS_TOL: f64 = 1e-10;

/// Most negative density value accepted as "nonnegative".
pub const NONNEG_TOL: f64 = 1e-10;

/// Discretization constant in the `C_DISC * (dt + h_a + h_z^2)` bound used
/// for `Q` constancy, the `C` ODE residual and the `C` prediction.
pub const C_DISC: f64 = 1.0;

/// Constant in the `C_DISC_ORACLE * (dt + h_a)` term of the particle check.
pub const C_DISC_ORACLE: f64 = 1.0;

/// `|Q_data|` above which data with `C(0) = 0` is reported infeasible.
pub const Q_DATA_TOL: f64 = 1e-8;

/// Discretization allowance `C_DISC * (dt + h_a + h_z^2)`.
pub fn discretization_bound(dt: f64, h_a: f64, h_z: f64) -> f64 {
    C_DISC * (dt + h_a + h_z * h_z)
}
