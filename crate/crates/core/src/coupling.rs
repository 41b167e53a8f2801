//! Moment functionals, the endogenous interest rate `r = P / K`, and the
//! frozen-coefficient Picard iteration coupling `g`, `y`, `f` and `r`.
//!
//! Given iterate `n` the loop computes
//!
//! * `g^{n+1}`: forward sweep from `g_0` with `r^n` and `Theta_c(y^n, f^n)`,
//! * `y^{n+1}`: backward sweep from `y_T` with the same coefficients,
//! * `f^{n+1} = exp(int_t^T (r^n - rho))`,
//! * `K^{n+1} = K_c[y^n, g^n, f^n]`,
//! * `r^{n+1} = P_c[y^n, f^n, g^n] / K^n`.
//!
//! The last line pairs `P` at iterate `n` with `K^n`, which was itself built
//! from iterate `n - 1` (or from the data when `n = 0`). The offset is
//! intentional.

use serde::Serialize;

use crate::diagnostics::{difference_energy_paths, DifferenceEnergy};
use crate::dynamics::{cfl_dt, solve_f, step_g_forward, step_y_backward, Discretization, FieldPath, ScalarPath, TimeGrid, MONOTONE_SAFETY};
use crate::error::{Result, SolverError};
use crate::grid::{Field, Grid2D};
use crate::model::{compute_floors, CutoffSpec};

/// `C = int a g`.
pub fn moment_c(grid: &Grid2D, g: &Field) -> f64 {
    let a = grid.a_nodes();
    let mut total = 0.0;
    for (i, row) in g.values().outer_iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            total += grid.weight(i, j) * a[i] * v;
        }
    }
    total
}

/// `Q = int (z + Theta_c(y, f)) g`.
pub fn moment_q(disc: &Discretization, spec: &CutoffSpec, g: &Field, y: &Field, f: f64) -> f64 {
    let theta = disc.theta_c(y, f, spec.w_floor);
    moment_q_with(&disc.grid, g, &theta)
}

fn moment_q_with(grid: &Grid2D, g: &Field, theta: &Field) -> f64 {
    let z = grid.z_nodes();
    let mut total = 0.0;
    for i in 0..grid.n_a() {
        for (j, zj) in z.iter().enumerate() {
            total += grid.weight(i, j) * (zj + theta.get(i, j)) * g.get(i, j);
        }
    }
    total
}

/// Pointwise quantities shared by `K`, `P` and the sweeps at one time node.
struct Slice {
    k: f64,
    p: f64,
}

fn evaluate_slice(disc: &Discretization, spec: &CutoffSpec, y: &Field, g: &Field, f: f64) -> Slice {
    let grid = &disc.grid;
    let model = &disc.model;
    let w_inf = model.config.w_inf;
    let rho = model.config.rho;
    let (n_a, n_z) = grid.shape();

    let mut theta = Field::zeros(grid);
    let mut hpp = Field::zeros(grid);
    {
        let (th, hp) = (theta.values_mut(), hpp.values_mut());
        for i in 0..n_a {
            for j in 0..n_z {
                let p = spec.psi(y.get(i, j) + f * w_inf);
                th[[i, j]] = model.utility.h_p(p);
                hp[[i, j]] = model.utility.h_pp(p);
            }
        }
    }

    let mut k = 0.0;
    for i in 0..n_a {
        for j in 0..n_z {
            k += grid.weight(i, j) * g.get(i, j) * hpp.get(i, j) * (y.get(i, j) + f * w_inf);
        }
    }

    let sigma2 = disc.sigma2();
    let mu = disc.mu();
    let drift_div = grid.conservative_divergence_z(g, mu, Some(sigma2));
    let diff = grid.conservative_diffusion_z(g, &sigma2.scaled(0.5));
    let transport = grid.conservative_divergence_a(g, &theta);
    let y_zz = grid.d2dz2(y);
    let y_z = grid.ddz(y);
    let y_a = grid.dda_central(y);
    let z = grid.z_nodes();

    let mut p = 0.0;
    for i in 0..n_a {
        for j in 0..n_z {
            let w = grid.weight(i, j);
            let (th, s2, m) = (theta.get(i, j), sigma2.get(i, j), mu.get(i, j));
            let first = -z[j] * drift_div.get(i, j);
            let second = g.get(i, j)
                * hpp.get(i, j)
                * (-0.5 * s2 * y_zz.get(i, j) - m * y_z.get(i, j) - th * y_a.get(i, j) + rho * (y.get(i, j) + f * w_inf));
            let third = th * (diff.get(i, j) - drift_div.get(i, j) - transport.get(i, j));
            p += w * (first + second + third);
        }
    }
    Slice { k, p }
}

/// `K_c[y, g, f] = int g H_pp(psi(y + f w)) (y + f w)`.
pub fn functional_k(disc: &Discretization, spec: &CutoffSpec, y: &Field, g: &Field, f: f64) -> f64 {
    evaluate_slice(disc, spec, y, g, f).k
}

/// `P_c[y, f, g]`: the rate-independent part of `dQ/dt`, with the divergence
/// terms in the same conservative form as the density step and the
/// derivatives of `y` by central differences.
pub fn functional_p(disc: &Discretization, spec: &CutoffSpec, y: &Field, f: f64, g: &Field) -> f64 {
    evaluate_slice(disc, spec, y, g, f).p
}

/// `K` fell below its floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FloorViolation {
    pub k: f64,
    pub floor: f64,
}

/// `r = P / K`, refused when `K < K_floor`.
pub fn interest_rate(p: f64, k: f64, k_floor: f64) -> std::result::Result<f64, FloorViolation> {
    if k >= k_floor && k.is_finite() {
        Ok(p / k)
    } else {
        Err(FloorViolation { k, floor: k_floor })
    }
}

/// Knobs of the fixed-point loop.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PicardOptions {
    /// Stop when `sup_t (E_dg + E_dy) + E_df` between successive iterates is
    /// at most this.
    pub tol: f64,
    pub max_iters: usize,
    /// Safety factor used to pick `dt` from the data; must not exceed
    /// [`MONOTONE_SAFETY`].
    pub cfl_safety: f64,
    /// Fixed number of time steps; chosen from the stability bound when `None`.
    pub n_t: Option<usize>,
    /// Constant initial rate `r^0`.
    pub initial_rate: f64,
}

impl Default for PicardOptions {
    fn default() -> Self {
        PicardOptions {
            tol: 1e-8,
            max_iters: 200,
            cfl_safety: 0.1,
            n_t: None,
            initial_rate: 0.0,
        }
    }
}

/// One Picard iterate.
#[derive(Debug, Clone)]
pub struct IterationState {
    pub iteration: usize,
    pub time: TimeGrid,
    pub y: FieldPath,
    pub g: FieldPath,
    pub f: ScalarPath,
    pub r: ScalarPath,
    pub k: ScalarPath,
}

impl IterationState {
    /// `min_t min_D (y + f w_inf)` and the `(time index, node)` where it occurs.
    pub fn positivity_margin(&self, w_inf: f64) -> (f64, usize, (usize, usize)) {
        let mut best = (f64::INFINITY, 0, (0, 0));
        for k in 0..self.time.len() {
            let y = self.y.get(k);
            let (i, j) = y.argmin();
            let m = y.get(i, j) + self.f[k] * w_inf;
            if m < best.0 {
                best = (m, k, (i, j));
            }
        }
        best
    }
}

/// Per-iterate record of the convergence history.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterateRecord {
    pub iteration: usize,
    pub e_dg: f64,
    pub e_dy: f64,
    pub e_df: f64,
    pub energy: f64,
    /// `max |r^n|` of the coefficients used for this iterate.
    pub r_max: f64,
    /// `max |Theta_c(y^n, f^n)|`.
    pub theta_max: f64,
    pub k_min: f64,
    pub margin_min: f64,
    pub g_extent: f64,
    pub y_extent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationReport {
    pub converged: bool,
    pub n_iters: usize,
    pub n_t: usize,
    pub dt: f64,
    pub tol: f64,
    pub floors: CutoffSpec,
    pub records: Vec<IterateRecord>,
    pub support_g: f64,
    pub support_y: f64,
    /// `R`: largest `|r|` over all iterates.
    pub r_bound: f64,
    /// `Y`: largest `|Theta_c|` over all iterates.
    pub theta_bound: f64,
    /// `A / (|z|_max + 3 R A + Y)`.
    pub admissible_horizon: f64,
    /// Geometric mean of the last (up to three) successive energy ratios.
    pub contraction_ratio: Option<f64>,
}

impl IterationReport {
    pub fn to_kv_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv("converged", self.converged.to_string());
        kv("n_iters", self.n_iters.to_string());
        kv("n_t", self.n_t.to_string());
        kv("dt", format!("{:e}", self.dt));
        kv("tol", format!("{:e}", self.tol));
        kv("w_floor", format!("{:e}", self.floors.w_floor));
        kv("k_data", format!("{:e}", self.floors.k_data));
        kv("k_floor", format!("{:e}", self.floors.k_floor));
        kv("support_g", format!("{:e}", self.support_g));
        kv("support_y", format!("{:e}", self.support_y));
        kv("r_bound", format!("{:e}", self.r_bound));
        kv("theta_bound", format!("{:e}", self.theta_bound));
        kv("admissible_horizon", format!("{:e}", self.admissible_horizon));
        kv(
            "contraction_ratio",
            self.contraction_ratio.map_or("none".into(), |r| format!("{r:e}")),
        );
        for rec in &self.records {
            kv(
                &format!("iterate.{}", rec.iteration),
                format!(
                    "energy={:e} e_dg={:e} e_dy={:e} e_df={:e} r_max={:e} theta_max={:e} k_min={:e} margin_min={:e} g_extent={:e} y_extent={:e}",
                    rec.energy, rec.e_dg, rec.e_dy, rec.e_df, rec.r_max, rec.theta_max, rec.k_min, rec.margin_min, rec.g_extent, rec.y_extent
                ),
            );
        }
        s
    }
}

fn contraction_ratio(records: &[IterateRecord]) -> Option<f64> {
    let energies: Vec<f64> = records.iter().map(|r| r.energy).filter(|e| *e > 1e-300).collect();
    if energies.len() < 2 {
        return None;
    }
    let k = (energies.len() - 1).min(3);
    let last = energies[energies.len() - 1];
    let first = energies[energies.len() - 1 - k];
    Some((last / first).powf(1.0 / k as f64))
}

/// Theta path of an iterate; constant when both `y` and `f` are.
fn theta_path(disc: &Discretization, spec: &CutoffSpec, y: &FieldPath, f: &ScalarPath) -> FieldPath {
    let f_const = f.values().windows(2).all(|w| w[0] == w[1]);
    if y.is_constant() && f_const {
        FieldPath::constant(disc.theta_c(y.get(0), f[0], spec.w_floor), y.len())
    } else {
        FieldPath::from_fields((0..y.len()).map(|k| disc.theta_c(y.get(k), f[k], spec.w_floor)).collect())
    }
}

/// Runs the fixed-point iteration from `(g_0, y_T)`.
pub fn picard_solve(disc: &Discretization, g0: &Field, y_t: &Field, opts: &PicardOptions) -> Result<(IterationState, IterationReport)> {
    let spec = compute_floors(&disc.model, &disc.grid, g0, y_t)?;
    picard_solve_with_floors(disc, &spec, g0, y_t, opts)
}

/// Chooses the time grid: explicit `n_t`, or the stability bound evaluated
/// with margins on the data (`f` in `[1/2, 2]`, twice the first rate estimate).
pub fn choose_time_grid(disc: &Discretization, spec: &CutoffSpec, g0: &Field, y_t: &Field, opts: &PicardOptions) -> Result<TimeGrid> {
    let horizon = disc.model.config.horizon;
    if let Some(n) = opts.n_t {
        return TimeGrid::new(horizon, n);
    }
    let theta_guess = [0.5, 2.0]
        .iter()
        .map(|&f| disc.theta_c(y_t, f, spec.w_floor).max_abs())
        .fold(0.0, f64::max);
    let slice = evaluate_slice(disc, spec, y_t, g0, 1.0);
    let r1 = slice.p / spec.k_data;
    let r_guess = 2.0 * disc.model.config.rho.max(opts.initial_rate.abs()).max(r1.abs());
    let dt = cfl_dt(disc, r_guess, theta_guess, opts.cfl_safety)?;
    TimeGrid::with_max_step(horizon, dt)
}

pub fn picard_solve_with_floors(disc: &Discretization, spec: &CutoffSpec, g0: &Field, y_t: &Field, opts: &PicardOptions) -> Result<(IterationState, IterationReport)> {
    let grid = &disc.grid;
    grid.check(g0)?;
    grid.check(y_t)?;
    if !(opts.cfl_safety > 0.0 && opts.cfl_safety <= MONOTONE_SAFETY) {
        return Err(SolverError::Config(format!(
            "cfl_safety must lie in (0, {MONOTONE_SAFETY}], got {}",
            opts.cfl_safety
        )));
    }
    if opts.max_iters == 0 || !(opts.tol >= 0.0) || !opts.initial_rate.is_finite() {
        return Err(SolverError::Config("need max_iters >= 1, tol >= 0 and a finite initial rate".into()));
    }
    let time = choose_time_grid(disc, spec, g0, y_t, opts)?;
    let n_t = time.n_t();
    let len = time.len();
    let dt = time.dt();
    let w_inf = disc.model.config.w_inf;
    let rho = disc.model.config.rho;
    let limit = spec.inner_limit();
    let support_tol = 1e-9 * grid.h_a();

    let mut state = IterationState {
        iteration: 0,
        time,
        y: FieldPath::constant(y_t.clone(), len),
        g: FieldPath::constant(g0.clone(), len),
        f: ScalarPath::constant(len, 1.0),
        r: ScalarPath::constant(len, opts.initial_rate),
        k: ScalarPath::constant(len, spec.k_data),
    };
    let mut records = Vec::new();
    let (mut r_bound, mut theta_bound) = (0.0f64, 0.0f64);

    for n in 0..opts.max_iters {
        let next_iter = n + 1;
        let theta = theta_path(disc, spec, &state.y, &state.f);
        let theta_max = theta.iter().map(Field::max_abs).fold(0.0, f64::max);
        let r_max = state.r.max_abs();
        r_bound = r_bound.max(r_max);
        theta_bound = theta_bound.max(theta_max);
        let stable = cfl_dt(disc, r_max, theta_max, MONOTONE_SAFETY)?;
        if dt > stable {
            return Err(SolverError::Cfl { iter: next_iter, dt, limit: stable });
        }

        // forward sweep
        let mut g_fields = Vec::with_capacity(len);
        g_fields.push(g0.clone());
        let mut g_extent = grid.support_extent(g0);
        for k in 0..n_t {
            let next = step_g_forward(disc, &g_fields[k], theta.get(k), state.r[k], dt)
                .map_err(|_| SolverError::Integration { field: "g", t: time.t(k + 1) })?;
            let extent = grid.support_extent(&next);
            if extent > limit + support_tol {
                return Err(SolverError::SupportEscape { field: "g", iter: next_iter, t: time.t(k + 1), extent, limit });
            }
            g_extent = g_extent.max(extent);
            g_fields.push(next);
        }

        // backward sweep
        let mut y_rev = Vec::with_capacity(len);
        y_rev.push(y_t.clone());
        let mut y_extent = grid.support_extent(y_t);
        for k in (0..n_t).rev() {
            let prev = y_rev.last().expect("seeded");
            let next = step_y_backward(disc, prev, theta.get(k + 1), state.r[k + 1], dt)
                .map_err(|_| SolverError::Integration { field: "y", t: time.t(k) })?;
            let extent = grid.support_extent(&next);
            if extent > limit + support_tol {
                return Err(SolverError::SupportEscape { field: "y", iter: next_iter, t: time.t(k), extent, limit });
            }
            y_extent = y_extent.max(extent);
            y_rev.push(next);
        }
        y_rev.reverse();

        let f_next = solve_f(&state.r, rho, &time);

        // K^{n+1} and r^{n+1} = P^n / K^n from iterate n
        let mut k_next = Vec::with_capacity(len);
        let mut r_next = Vec::with_capacity(len);
        let mut cached: Option<(f64, f64)> = None;
        let inputs_const = state.y.is_constant() && state.g.is_constant();
        for k in 0..len {
            let reuse = inputs_const && k > 0 && state.f[k] == state.f[k - 1];
            let (kv, pv) = match (reuse, cached) {
                (true, Some(c)) => c,
                _ => {
                    let s = evaluate_slice(disc, spec, state.y.get(k), state.g.get(k), state.f[k]);
                    (s.k, s.p)
                }
            };
            cached = Some((kv, pv));
            let r = interest_rate(pv, state.k[k], spec.k_floor).map_err(|v| SolverError::KFloor {
                iter: n,
                t_index: k,
                t: time.t(k),
                k: v.k,
                floor: v.floor,
            })?;
            k_next.push(kv);
            r_next.push(r);
        }

        let next = IterationState {
            iteration: next_iter,
            time,
            y: FieldPath::from_fields(y_rev),
            g: FieldPath::from_fields(g_fields),
            f: f_next,
            r: ScalarPath::new(r_next),
            k: ScalarPath::new(k_next),
        };

        let (margin, k_at, _) = next.positivity_margin(w_inf);
        if margin < 0.5 * spec.w_floor {
            return Err(SolverError::PositivityFloor {
                iter: next_iter,
                t: time.t(k_at),
                margin,
                floor: 0.5 * spec.w_floor,
            });
        }

        let energy = difference_energy_paths(grid, &next.y, &next.g, &next.f, &state.y, &state.g, &state.f)?;
        let total = energy.total();
        records.push(IterateRecord {
            iteration: next_iter,
            e_dg: energy.e_dg.max(),
            e_dy: energy.e_dy.max(),
            e_df: energy.e_df,
            energy: total,
            r_max,
            theta_max,
            k_min: next.k.min(),
            margin_min: margin,
            g_extent,
            y_extent,
        });
        state = next;

        if total <= opts.tol {
            let k_min = state.k.min();
            if k_min < spec.k_floor {
                let t_index = state.k.values().iter().position(|v| *v == k_min).unwrap_or(0);
                return Err(SolverError::KFloor { iter: next_iter, t_index, t: time.t(t_index), k: k_min, floor: spec.k_floor });
            }
            r_bound = r_bound.max(state.r.max_abs());
            let final_theta = theta_path(disc, spec, &state.y, &state.f);
            theta_bound = theta_bound.max(final_theta.iter().map(Field::max_abs).fold(0.0, f64::max));
            let report = build_report(disc, spec, &state, records, opts, r_bound, theta_bound, true);
            return Ok((state, report));
        }
    }
    let energy = records.last().map_or(f64::INFINITY, |r| r.energy);
    Err(SolverError::NonConvergence { iters: opts.max_iters, energy })
}

#[allow(clippy::too_many_arguments)]
fn build_report(
    disc: &Discretization,
    spec: &CutoffSpec,
    state: &IterationState,
    records: Vec<IterateRecord>,
    opts: &PicardOptions,
    r_bound: f64,
    theta_bound: f64,
    converged: bool,
) -> IterationReport {
    let grid = &disc.grid;
    let support_g = state.g.iter().map(|f| grid.support_extent(f)).fold(0.0, f64::max);
    let support_y = state.y.iter().map(|f| grid.support_extent(f)).fold(0.0, f64::max);
    let (z_lo, z_hi) = grid.z_bounds();
    let a = spec.half_width;
    let admissible_horizon = a / (z_lo.abs().max(z_hi.abs()) + 3.0 * r_bound * a + theta_bound);
    IterationReport {
        converged,
        n_iters: records.len(),
        n_t: state.time.n_t(),
        dt: state.time.dt(),
        tol: opts.tol,
        floors: *spec,
        contraction_ratio: contraction_ratio(&records),
        records,
        support_g,
        support_y,
        r_bound,
        theta_bound,
        admissible_horizon,
    }
}

/// Difference energies between two states on the same grids.
pub fn state_difference(disc: &Discretization, a: &IterationState, b: &IterationState) -> Result<DifferenceEnergy> {
    difference_energy_paths(&disc.grid, &a.y, &a.g, &a.f, &b.y, &b.g, &b.f)
}
