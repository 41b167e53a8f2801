//! Moments, difference energies, discrete Sobolev norms and the invariant
//! suite run on a converged state.

use std::io::Write;

use serde::Serialize;

use crate::coupling::{functional_k, functional_p, moment_c, moment_q, IterationState};
use crate::dynamics::{Discretization, FieldPath, ScalarPath, TimeGrid};
use crate::error::{Result, SolverError};
use crate::grid::{Field, Grid2D};
use crate::model::{compute_floors, CutoffSpec};
use crate::tolerances::{discretization_bound, MASS_TOL, NONNEG_TOL};

/// `Q_data = int (z + H_p(y_T + w_inf)) g_0`, evaluated without the cutoff.
/// Fails with [`SolverError::DataRejected`] when `W <= 0`.
pub fn q_data(disc: &Discretization, g0: &Field, y_t: &Field) -> Result<f64> {
    let model = &disc.model;
    compute_floors(model, &disc.grid, g0, y_t)?;
    let z = disc.grid.z_nodes();
    let w_inf = model.config.w_inf;
    let mut total = 0.0;
    for i in 0..disc.grid.n_a() {
        for (j, zj) in z.iter().enumerate() {
            let h_p = model.utility.h_p(y_t.get(i, j) + w_inf);
            total += disc.grid.weight(i, j) * (zj + h_p) * g0.get(i, j);
        }
    }
    Ok(total)
}

/// Solves `C' = r C + Q` from `C(0) = c0` with the trapezoid integrating factor
/// `C_{k+1} = E_k C_k + dt/2 (E_k Q_k + Q_{k+1})`, `E_k = exp(dt (r_k + r_{k+1}) / 2)`.
pub fn predict_c(c0: f64, r: &ScalarPath, q: &ScalarPath, time: &TimeGrid) -> ScalarPath {
    assert_eq!(r.len(), time.len(), "rate path length");
    assert_eq!(q.len(), time.len(), "Q path length");
    let mut out = Vec::with_capacity(time.len());
    out.push(c0);
    for k in 0..time.n_t() {
        let dt = time.t(k + 1) - time.t(k);
        let e = (0.5 * dt * (r[k] + r[k + 1])).exp();
        let next = e * out[k] + 0.5 * dt * (e * q[k] + q[k + 1]);
        out.push(next);
    }
    ScalarPath::new(out)
}

/// Difference energies between two iterates.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceEnergy {
    /// `1/2 int (g1 - g2)^2` at every time node.
    pub e_dg: ScalarPath,
    /// `1/2 int |grad (y1 - y2)|^2` at every time node.
    pub e_dy: ScalarPath,
    /// `sup_t 1/2 (f1 - f2)^2`.
    pub e_df: f64,
}

impl DifferenceEnergy {
    /// `sup_t (E_dg + E_dy) + E_df`.
    pub fn total(&self) -> f64 {
        let sup = self
            .e_dg
            .values()
            .iter()
            .zip(self.e_dy.values())
            .map(|(a, b)| a + b)
            .fold(0.0, f64::max);
        sup + self.e_df
    }
}

pub fn difference_energy_paths(
    grid: &Grid2D,
    y1: &FieldPath,
    g1: &FieldPath,
    f1: &ScalarPath,
    y2: &FieldPath,
    g2: &FieldPath,
    f2: &ScalarPath,
) -> Result<DifferenceEnergy> {
    let len = y1.len();
    if [g1.len(), f1.len(), y2.len(), g2.len(), f2.len()].iter().any(|&l| l != len) {
        return Err(SolverError::GridMismatch("paths have different time grids".into()));
    }
    let mut e_dg = Vec::with_capacity(len);
    let mut e_dy = Vec::with_capacity(len);
    for k in 0..len {
        let dg = g1.get(k) - g2.get(k);
        e_dg.push(0.5 * grid.integrate_product(&dg, &dg));
        let dy = y1.get(k) - y2.get(k);
        let da = grid.dda_central(&dy);
        let dz = grid.ddz(&dy);
        e_dy.push(0.5 * (grid.integrate_product(&da, &da) + grid.integrate_product(&dz, &dz)));
    }
    let e_df = f1
        .values()
        .iter()
        .zip(f2.values())
        .map(|(a, b)| 0.5 * (a - b) * (a - b))
        .fold(0.0, f64::max);
    Ok(DifferenceEnergy {
        e_dg: ScalarPath::new(e_dg),
        e_dy: ScalarPath::new(e_dy),
        e_df,
    })
}

/// Discrete `H^order` norm: square root of the sum over `j + l <= order` of
/// `int (d_a^j d_z^l u)^2`, with central differences.
pub fn discrete_norm(grid: &Grid2D, u: &Field, order: usize) -> f64 {
    let mut total = 0.0;
    let mut by_a = u.clone();
    for ja in 0..=order {
        let mut mixed = by_a.clone();
        for lz in 0..=(order - ja) {
            total += grid.integrate_product(&mixed, &mixed);
            if lz < order - ja {
                mixed = grid.ddz(&mixed);
            }
        }
        if ja < order {
            by_a = grid.dda_central(&by_a);
        }
    }
    total.sqrt()
}

/// Per-time-node scalar diagnostics of a state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentSeries {
    pub t: Vec<f64>,
    pub r: Vec<f64>,
    pub f: Vec<f64>,
    pub k: Vec<f64>,
    pub p: Vec<f64>,
    pub c: Vec<f64>,
    pub q: Vec<f64>,
    pub mass: Vec<f64>,
    /// `min_D (y + f w_inf)`.
    pub margin: Vec<f64>,
    /// Support extent of `g`.
    pub support: Vec<f64>,
}

impl MomentSeries {
    pub fn compute(disc: &Discretization, spec: &CutoffSpec, state: &IterationState) -> MomentSeries {
        let grid = &disc.grid;
        let w_inf = disc.model.config.w_inf;
        let mut s = MomentSeries {
            t: state.time.nodes(),
            r: state.r.values().to_vec(),
            f: state.f.values().to_vec(),
            k: Vec::new(),
            p: Vec::new(),
            c: Vec::new(),
            q: Vec::new(),
            mass: Vec::new(),
            margin: Vec::new(),
            support: Vec::new(),
        };
        for k in 0..state.time.len() {
            let (g, y, f) = (state.g.get(k), state.y.get(k), state.f[k]);
            s.k.push(functional_k(disc, spec, y, g, f));
            s.p.push(functional_p(disc, spec, y, f, g));
            s.c.push(moment_c(grid, g));
            s.q.push(moment_q(disc, spec, g, y, f));
            s.mass.push(grid.integrate(g));
            s.margin.push(y.min() + f * w_inf);
            s.support.push(grid.support_extent(g));
        }
        s
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Writes `t,r,f,K,P,C,Q,mass,margin,support`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "r", "f", "K", "P", "C", "Q", "mass", "margin", "support"])?;
        for k in 0..self.len() {
            let row = [
                self.t[k],
                self.r[k],
                self.f[k],
                self.k[k],
                self.p[k],
                self.c[k],
                self.q[k],
                self.mass[k],
                self.margin[k],
                self.support[k],
            ];
            w.write_record(row.iter().map(|v| format!("{v:e}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Outcome of a single invariant check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub tolerance: f64,
    /// Where the worst value occurred, e.g. `t=0.05` or `t=0.05 a=1.2 z=0.7`.
    pub location: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantReport {
    pub checks: Vec<Check>,
}

impl InvariantReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn to_kv_text(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            s.push_str(&format!(
                "{} = {} measured={:e} tolerance={:e} at {}\n",
                c.name,
                if c.passed { "pass" } else { "FAIL" },
                c.measured,
                c.tolerance,
                c.location
            ));
        }
        s.push_str(&format!("all_passed = {}\n", self.all_passed()));
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn check(name: &str, passed: bool, measured: f64, tolerance: f64, location: String) -> Check {
    Check {
        name: name.to_string(),
        passed,
        measured,
        tolerance,
        location,
    }
}

/// Largest `|x_k - reference|`, with its index.
fn worst_deviation(values: &[f64], reference: impl Fn(usize) -> f64) -> (f64, usize) {
    let mut best = (0.0, 0);
    for (k, v) in values.iter().enumerate() {
        let d = (v - reference(k)).abs();
        if d > best.0 || d.is_nan() {
            best = (d, k);
        }
    }
    best
}

/// Runs every invariant check on `state`. Failures are reported, never raised.
pub fn run_invariant_suite(disc: &Discretization, spec: &CutoffSpec, state: &IterationState) -> InvariantReport {
    let grid = &disc.grid;
    let time = &state.time;
    let moments = MomentSeries::compute(disc, spec, state);
    let mut checks = Vec::new();
    let at = |k: usize| format!("t={:e}", time.t(k));

    // mass against the unit mass of a probability density
    let (dev, k) = worst_deviation(&moments.mass, |_| 1.0);
    checks.push(check("mass", dev <= MASS_TOL, moments.mass[k], MASS_TOL, at(k)));

    let mut neg = (f64::INFINITY, 0, (0, 0));
    for k in 0..time.len() {
        let g = state.g.get(k);
        let (i, j) = g.argmin();
        if g.get(i, j) < neg.0 {
            neg = (g.get(i, j), k, (i, j));
        }
    }
    let (i, j) = neg.2;
    checks.push(check(
        "nonnegativity",
        neg.0 >= -NONNEG_TOL,
        neg.0,
        -NONNEG_TOL,
        format!("t={:e} a={:e} z={:e}", time.t(neg.1), grid.a_nodes()[i], grid.z_nodes()[j]),
    ));

    let (k_min, k_at) = moments
        .k
        .iter()
        .enumerate()
        .fold((f64::INFINITY, 0), |acc, (k, v)| if *v < acc.0 { (*v, k) } else { acc });
    checks.push(check("k_floor", k_min >= spec.k_floor, k_min, spec.k_floor, at(k_at)));

    let (margin, m_at, (mi, mj)) = state.positivity_margin(disc.model.config.w_inf);
    checks.push(check(
        "positivity_margin",
        margin >= 0.5 * spec.w_floor,
        margin,
        0.5 * spec.w_floor,
        format!("t={:e} a={:e} z={:e}", time.t(m_at), grid.a_nodes()[mi], grid.z_nodes()[mj]),
    ));

    let limit = spec.inner_limit();
    let support_tol = 1e-9 * grid.h_a();
    for (name, path) in [("support_g", &state.g), ("support_y", &state.y)] {
        let (ext, k) = path
            .iter()
            .map(|f| grid.support_extent(f))
            .enumerate()
            .fold((0.0, 0), |acc, (k, e)| if e > acc.0 { (e, k) } else { acc });
        checks.push(check(name, ext <= limit + support_tol, ext, limit, at(k)));
    }

    let bound = discretization_bound(time.dt(), grid.h_a(), grid.h_z());
    let (dev, k) = worst_deviation(&moments.q, |_| moments.q[0]);
    checks.push(check("q_constancy", dev <= bound, dev, bound, at(k)));

    let n = time.len();
    let dt = time.dt();
    let mut residual = (0.0, 0);
    for k in 1..n.saturating_sub(1) {
        let dc = (moments.c[k + 1] - moments.c[k - 1]) / (2.0 * dt);
        let res = (dc - moments.r[k] * moments.c[k] - moments.q[k]).abs();
        if res > residual.0 || res.is_nan() {
            residual = (res, k);
        }
    }
    checks.push(check("c_ode_residual", residual.0 <= bound, residual.0, bound, at(residual.1)));

    let predicted = predict_c(moments.c[0], &state.r, &ScalarPath::new(moments.q.clone()), time);
    let (dev, k) = worst_deviation(&moments.c, |k| predicted[k]);
    checks.push(check("c_prediction", dev <= bound, dev, bound, at(k)));

    InvariantReport { checks }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::{picard_solve, PicardOptions};
    use crate::model::{Model, ModelConfig};
    use approx::assert_abs_diff_eq;

    fn disc(cfg: ModelConfig, n_a: usize, n_z: usize) -> Discretization {
        Discretization::new(Model::new(cfg).unwrap(), n_a, n_z).unwrap()
    }

    fn unit_density(grid: &Grid2D, z_c: f64) -> Field {
        let g = Field::from_fn(grid, |a, z| {
            let s = a / 0.6;
            let wa = if s.abs() < 1.0 { (-1.0 / (1.0 - s * s)).exp() } else { 0.0 };
            wa * (-((z - z_c) / 0.2).powi(2)).exp()
        });
        g.scaled(1.0 / grid.integrate(&g))
    }

    #[test]
    fn q_data_examples() {
        let d = disc(ModelConfig::default(), 48, 24);
        let g0 = unit_density(&d.grid, 1.0);
        let y0 = Field::zeros(&d.grid);
        assert_abs_diff_eq!(q_data(&d, &g0, &y0).unwrap(), 0.0, epsilon = 1e-13);

        let cfg = ModelConfig { z_min: 0.5, z_max: 2.5, ..ModelConfig::default() };
        let d2 = disc(cfg, 48, 48);
        let g0 = unit_density(&d2.grid, 1.5);
        assert_abs_diff_eq!(q_data(&d2, &g0, &Field::zeros(&d2.grid)).unwrap(), 0.5, epsilon = 1e-12);

        let bad = Field::constant(&d.grid, -1.5);
        assert!(matches!(q_data(&d, &unit_density(&d.grid, 1.0), &bad), Err(SolverError::DataRejected { .. })));
    }

    #[test]
    fn predict_c_examples() {
        let time = TimeGrid::new(1.0, 1000).unwrap();
        let c = predict_c(0.0, &ScalarPath::constant(1001, 0.0), &ScalarPath::constant(1001, 0.0), &time);
        assert!(c.values().iter().all(|v| *v == 0.0));

        let c = predict_c(1.0, &ScalarPath::constant(1001, 0.05), &ScalarPath::constant(1001, 0.0), &time);
        assert_abs_diff_eq!(c.last(), 0.05f64.exp(), epsilon = 1e-12);

        // C' = r C + Q with C(0) = 0: C = Q (e^{rt} - 1) / r
        let c = predict_c(0.0, &ScalarPath::constant(1001, 0.05), &ScalarPath::constant(1001, 0.5), &time);
        let exact = 0.5 * (0.05f64.exp() - 1.0) / 0.05;
        assert!((c.last() - exact).abs() < 1e-6);
    }

    #[test]
    fn discrete_norm_of_linear_function() {
        let d = disc(ModelConfig::default(), 61, 21);
        let grid = &d.grid;
        let one = Field::constant(grid, 1.0);
        let area: f64 = 6.0;
        assert_abs_diff_eq!(discrete_norm(grid, &one, 0), area.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(discrete_norm(grid, &one, 3), area.sqrt(), epsilon = 1e-10);
        // u = a: int a^2 over [-3,3]x[0.5,1.5] = 18 (trapezoid adds h^2 correction)
        let u = Field::from_fn(grid, |a, _| a);
        let h = grid.h_a();
        let int_a2 = 18.0 + 6.0 * h * h / 6.0;
        assert_abs_diff_eq!(discrete_norm(grid, &u, 1), (int_a2 + area).sqrt(), epsilon = 1e-10);
        assert_eq!(discrete_norm(grid, &Field::zeros(grid), 3), 0.0);
    }

    #[test]
    fn difference_energy_of_identical_paths_is_zero() {
        let d = disc(ModelConfig::default(), 32, 16);
        let g = FieldPath::constant(unit_density(&d.grid, 1.0), 4);
        let y = FieldPath::constant(Field::zeros(&d.grid), 4);
        let f = ScalarPath::constant(4, 1.0);
        let e = difference_energy_paths(&d.grid, &y, &g, &f, &y, &g, &f).unwrap();
        assert_eq!(e.total(), 0.0);
        let f2 = ScalarPath::constant(4, 1.5);
        let e = difference_energy_paths(&d.grid, &y, &g, &f, &y, &g, &f2).unwrap();
        assert_abs_diff_eq!(e.total(), 0.125, epsilon = 1e-15);
    }

    fn converged_with(y_level: f64) -> (Discretization, CutoffSpec, IterationState) {
        let d = disc(ModelConfig::default(), 48, 24);
        let g0 = unit_density(&d.grid, 1.0);
        // compactly supported dip of depth `y_level` (unit peak window)
        let y_t = Field::from_fn(&d.grid, |a, _| {
            let s = a / 0.8;
            if s.abs() < 1.0 { y_level * (1.0 - 1.0 / (1.0 - s * s)).exp() } else { 0.0 }
        });
        let spec = compute_floors(&d.model, &d.grid, &g0, &y_t).unwrap();
        let (state, _) = picard_solve(&d, &g0, &y_t, &PicardOptions::default()).unwrap();
        (d, spec, state)
    }

    fn converged() -> (Discretization, CutoffSpec, IterationState) {
        converged_with(0.0)
    }

    #[test]
    fn suite_passes_on_consistency_state() {
        let (d, spec, state) = converged();
        let report = run_invariant_suite(&d, &spec, &state);
        assert!(report.all_passed(), "{}", report.to_kv_text());
        let json: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(json["checks"].as_array().unwrap().len(), report.checks.len());
    }

    #[test]
    fn suite_flags_doubled_mass() {
        let (d, spec, mut state) = converged();
        state.g = state.g.map(|g| g.scaled(2.0));
        let report = run_invariant_suite(&d, &spec, &state);
        let mass = report.get("mass").unwrap();
        assert!(!mass.passed);
        assert_abs_diff_eq!(mass.measured, 2.0, epsilon = 1e-10);
    }

    #[test]
    fn suite_flags_halved_discount() {
        // W = 0.8, so halving f drops min(y + f w) to about 0.3 < W / 2
        let (d, spec, mut state) = converged_with(-0.2);
        state.f = ScalarPath::new(state.f.values().iter().map(|f| 0.5 * f).collect());
        let report = run_invariant_suite(&d, &spec, &state);
        assert!(!report.get("positivity_margin").unwrap().passed);
    }
}
