//! Explicit time stepping of the frozen-coefficient forward (density) and
//! backward (value-gradient) equations, the closed-form discount factor, and
//! the stability-limited time step.
//!
//! Forward:  `g_t = 1/2 (sigma^2 g)_zz - (mu g)_z - (chi (z + r a + Theta_c) g)_a`
//! Backward: `y_t + 1/2 sigma^2 y_zz + mu y_z + (r - rho) y + chi (z + r a + Theta_c) y_a = 0`
//!
//! The backward equation is integrated forward in `tau = T - t`. In `a` both
//! equations upwind against the local transport speed; in `z` a centred stencil
//! is used wherever the cell Peclet number allows it and an upwind one
//! elsewhere, so every explicit update is a nonnegative combination of old
//! values once `dt` respects [`cfl_dt`] at [`MONOTONE_SAFETY`].

use crate::error::{Result, SolverError};
use crate::grid::{Field, Grid2D};
use crate::model::Model;

/// Largest safety factor for which the explicit updates stay monotone.
pub const MONOTONE_SAFETY: f64 = 0.2;

/// Model, grid and the coefficient tables both steppers need.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub model: Model,
    pub grid: Grid2D,
    chi: Field,
    chi_a: Field,
    chi_z: Field,
    sigma2: Field,
    half_sigma2: Field,
    mu: Field,
}

impl Discretization {
    pub fn new(model: Model, n_a: usize, n_z: usize) -> Result<Self> {
        let c = &model.config;
        let grid = Grid2D::new(c.half_width, c.z_min, c.z_max, n_a, n_z)?;
        Self::on_grid(model, grid)
    }

    pub fn on_grid(model: Model, grid: Grid2D) -> Result<Self> {
        let (lo, hi) = model.income.bounds();
        let (g_lo, g_hi) = grid.z_bounds();
        if lo != g_lo || hi != g_hi || grid.half_width() != model.config.half_width {
            return Err(SolverError::GridMismatch("grid extents differ from the model".into()));
        }
        let income = &model.income;
        let scale = 1.0 + hi.abs().max(lo.abs());
        for z in [lo, hi] {
            let (s, m) = income.coefficients(z)?;
            if s.abs() > 1e-12 * scale || m.abs() > 1e-12 * scale {
                return Err(SolverError::Config(format!(
                    "sigma and mu must vanish at the income bounds, got ({s}, {m}) at z = {z}"
                )));
            }
        }
        let a_cut = model.config.half_width;
        let chi = Field::from_fn(&grid, |a, _| crate::model::chi(a, a_cut));
        let chi_a = Field::from_fn(&grid, |a, _| crate::model::chi(a, a_cut) * a);
        let chi_z = Field::from_fn(&grid, |a, z| crate::model::chi(a, a_cut) * z);
        let sigma2 = Field::from_fn(&grid, |_, z| income.sigma(z).powi(2));
        let half_sigma2 = sigma2.scaled(0.5);
        let mu = Field::from_fn(&grid, |_, z| income.mu(z));
        Ok(Discretization {
            model,
            grid,
            chi,
            chi_a,
            chi_z,
            sigma2,
            half_sigma2,
            mu,
        })
    }

    pub fn sigma2(&self) -> &Field {
        &self.sigma2
    }

    pub fn mu(&self) -> &Field {
        &self.mu
    }

    pub fn chi(&self) -> &Field {
        &self.chi
    }

    /// `Theta_c(y, f)` at every node.
    pub fn theta_c(&self, y: &Field, f: f64, w_floor: f64) -> Field {
        y.map(|yv| self.model.theta_c(yv, f, w_floor))
    }

    /// Wealth transport speed `chi (z + r a + Theta_c)`.
    pub fn transport_speed(&self, theta: &Field, r: f64) -> Field {
        let mut v = self.chi_z.clone();
        ndarray::Zip::from(v.values_mut())
            .and(self.chi_a.values())
            .and(self.chi.values())
            .and(theta.values())
            .for_each(|v, &ca, &c, &th| *v += r * ca + c * th);
        v
    }

    /// Right-hand side of the forward equation for frozen `Theta_c` and `r`.
    pub fn forward_rhs(&self, g: &Field, theta: &Field, r: f64) -> Field {
        let grid = &self.grid;
        let speed = self.transport_speed(theta, r);
        let diffusion = grid.conservative_diffusion_z(g, &self.half_sigma2);
        let drift = grid.conservative_divergence_z(g, &self.mu, Some(&self.sigma2));
        let transport = grid.conservative_divergence_a(g, &speed);
        let mut out = diffusion;
        ndarray::Zip::from(out.values_mut())
            .and(drift.values())
            .and(transport.values())
            .for_each(|o, &d, &t| *o -= d + t);
        out
    }

    /// `dy/dtau` of the backward equation for frozen `Theta_c` and `r`.
    pub fn backward_rhs(&self, y: &Field, theta: &Field, r: f64) -> Field {
        let grid = &self.grid;
        let (n_a, n_z) = grid.shape();
        let h = grid.h_z();
        let speed = self.transport_speed(theta, r);
        let upstream = speed.map(|v| -v);
        let y_a = grid.dda_upwind(y, &upstream);
        let decay = r - self.model.config.rho;
        let yv = y.values();
        let s2 = self.sigma2.values();
        let mu = self.mu.values();
        let mut out = Field::zeros(grid);
        let o = out.values_mut();
        for i in 0..n_a {
            for j in 0..n_z {
                let mut z_terms = 0.0;
                // sigma and mu vanish on the z boundary rows
                if j > 0 && j + 1 < n_z {
                    let (up, mid, down) = (yv[[i, j + 1]], yv[[i, j]], yv[[i, j - 1]]);
                    z_terms += 0.5 * s2[[i, j]] * (up - 2.0 * mid + down) / (h * h);
                    let m = mu[[i, j]];
                    let dz = if m.abs() * h <= s2[[i, j]] {
                        (up - down) / (2.0 * h)
                    } else if m > 0.0 {
                        (up - mid) / h
                    } else {
                        (mid - down) / h
                    };
                    z_terms += m * dz;
                }
                o[[i, j]] = z_terms + decay * yv[[i, j]] + speed.get(i, j) * y_a.get(i, j);
            }
        }
        out
    }
}

/// Uniform time nodes on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    n_t: usize,
    dt: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_t: usize) -> Result<Self> {
        if n_t == 0 || !(horizon > 0.0) || !horizon.is_finite() {
            return Err(SolverError::DegenerateStep(format!(
                "time grid needs n_t >= 1 and T > 0, got n_t = {n_t}, T = {horizon}"
            )));
        }
        Ok(TimeGrid {
            horizon,
            n_t,
            dt: horizon / n_t as f64,
        })
    }

    /// Fewest uniform steps with `dt <= dt_max`.
    pub fn with_max_step(horizon: f64, dt_max: f64) -> Result<Self> {
        if !(dt_max > 0.0) || !dt_max.is_finite() {
            return Err(SolverError::DegenerateStep(format!("step bound {dt_max} is not a positive finite number")));
        }
        let n = (horizon / dt_max).ceil().max(1.0);
        if n > 1e8 {
            return Err(SolverError::DegenerateStep(format!("{n} time steps requested")));
        }
        Self::new(horizon, n as usize)
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn horizon(&self) -> f64 {
        self.horizon
    }
    pub fn len(&self) -> usize {
        self.n_t + 1
    }
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn t(&self, k: usize) -> f64 {
        if k == self.n_t {
            self.horizon
        } else {
            k as f64 * self.dt
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.t(k)).collect()
    }
}

/// A scalar function of time, one value per time node.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarPath(Vec<f64>);

impl ScalarPath {
    pub fn new(values: Vec<f64>) -> Self {
        ScalarPath(values)
    }

    pub fn constant(len: usize, value: f64) -> Self {
        ScalarPath(vec![value; len])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn last(&self) -> f64 {
        *self.0.last().expect("empty path")
    }
}

impl std::ops::Index<usize> for ScalarPath {
    type Output = f64;
    fn index(&self, k: usize) -> &f64 {
        &self.0[k]
    }
}

/// One field per time node. A path built with [`FieldPath::constant`] stores
/// a single field.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldPath {
    fields: Vec<Field>,
    len: usize,
}

impl FieldPath {
    pub fn constant(field: Field, len: usize) -> Self {
        FieldPath { fields: vec![field], len }
    }

    pub fn from_fields(fields: Vec<Field>) -> Self {
        let len = fields.len();
        FieldPath { fields, len }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_constant(&self) -> bool {
        self.fields.len() == 1
    }

    pub fn get(&self, k: usize) -> &Field {
        assert!(k < self.len, "time index {k} out of range {}", self.len);
        if self.is_constant() {
            &self.fields[0]
        } else {
            &self.fields[k]
        }
    }

    pub fn last(&self) -> &Field {
        self.get(self.len - 1)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Field> {
        (0..self.len).map(move |k| self.get(k))
    }

    pub fn map(&self, f: impl Fn(&Field) -> Field) -> FieldPath {
        FieldPath {
            fields: self.fields.iter().map(f).collect(),
            len: self.len,
        }
    }
}

/// Largest stable step:
/// `safety * min(h_a / (|z|_max + 3 r_max A + theta_max), h_z / max|mu|, h_z^2 / max sigma^2)`.
///
/// Terms whose rate vanishes are dropped; if all vanish the step is unbounded
/// and an error is returned.
pub fn cfl_dt(disc: &Discretization, r_max: f64, theta_max: f64, safety: f64) -> Result<f64> {
    if !(r_max >= 0.0) || !(theta_max >= 0.0) {
        return Err(SolverError::DegenerateStep(format!(
            "speed bounds must be >= 0, got r_max = {r_max}, theta_max = {theta_max}"
        )));
    }
    if !(safety > 0.0 && safety <= 1.0) {
        return Err(SolverError::DegenerateStep(format!("safety {safety} outside (0, 1]")));
    }
    let grid = &disc.grid;
    let (z_lo, z_hi) = grid.z_bounds();
    let transport = z_lo.abs().max(z_hi.abs()) + 3.0 * r_max * grid.half_width() + theta_max;
    let mu_max = disc.mu.max_abs();
    let s2_max = disc.sigma2.max_abs();
    let mut dt = f64::INFINITY;
    if transport > 0.0 {
        dt = dt.min(grid.h_a() / transport);
    }
    if mu_max > 0.0 {
        dt = dt.min(grid.h_z() / mu_max);
    }
    if s2_max > 0.0 {
        dt = dt.min(grid.h_z() * grid.h_z() / s2_max);
    }
    if !dt.is_finite() {
        return Err(SolverError::DegenerateStep("no transport or diffusion: step is unbounded".into()));
    }
    Ok(safety * dt)
}

/// One explicit Euler step of the density equation with frozen `Theta_c`.
pub fn step_g_forward(disc: &Discretization, g: &Field, theta: &Field, r: f64, dt: f64) -> Result<Field> {
    let rhs = disc.forward_rhs(g, theta, r);
    let out = Field::from_zip(g, &rhs, |g, d| g + dt * d);
    if out.is_finite() {
        Ok(out)
    } else {
        Err(SolverError::Integration { field: "g", t: f64::NAN })
    }
}

/// [`step_g_forward`] with `Theta_c` built from `(y, f)`.
pub fn step_g_forward_from(disc: &Discretization, g: &Field, y: &Field, f: f64, w_floor: f64, r: f64, dt: f64) -> Result<Field> {
    let theta = disc.theta_c(y, f, w_floor);
    step_g_forward(disc, g, &theta, r, dt)
}

/// One explicit step of the value-gradient equation from `t` to `t - dt`.
pub fn step_y_backward(disc: &Discretization, y: &Field, theta: &Field, r: f64, dt: f64) -> Result<Field> {
    let rhs = disc.backward_rhs(y, theta, r);
    let out = Field::from_zip(y, &rhs, |y, d| y + dt * d);
    if out.is_finite() {
        Ok(out)
    } else {
        Err(SolverError::Integration { field: "y", t: f64::NAN })
    }
}

/// `f(t) = exp(int_t^T (r - rho))` with the integral by the trapezoid rule.
pub fn solve_f(r: &ScalarPath, rho: f64, time: &TimeGrid) -> ScalarPath {
    let n = time.n_t();
    assert_eq!(r.len(), n + 1, "rate path length");
    let mut out = vec![1.0; n + 1];
    let mut exponent = 0.0;
    for k in (0..n).rev() {
        let dt = time.t(k + 1) - time.t(k);
        exponent += 0.5 * dt * ((r[k] - rho) + (r[k + 1] - rho));
        out[k] = exponent.exp();
    }
    ScalarPath(out)
}
