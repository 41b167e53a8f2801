//! Monte Carlo cross-check: particles driven by the cutoff SDE with the
//! solved `r`, `y` and `f`, whose empirical moments estimate `C(t)` and `Q(t)`.
//!
//! Every particle owns a ChaCha8 stream (`seed`, stream = particle index), and
//! per-snapshot sums are accumulated over fixed-size particle chunks and then
//! reduced in chunk order, so a run is bit-for-bit reproducible for a given
//! seed regardless of the number of worker threads.

use std::io::Write;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::coupling::IterationState;
use crate::dynamics::Discretization;
use crate::error::{Result, SolverError};
use crate::grid::{Field, Grid2D};
use crate::model::CutoffSpec;
use crate::tolerances::C_DISC_ORACLE;

const CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleOptions {
    pub particles: usize,
    pub seed: u64,
    /// Record every `stride`-th time node (the final node is always recorded).
    pub stride: usize,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            particles: 100_000,
            seed: 0,
            stride: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleSnapshot {
    pub t_index: usize,
    pub t: f64,
    pub c_emp: f64,
    pub q_emp: f64,
    pub se_c: f64,
    pub se_q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleRun {
    pub particles: usize,
    pub seed: u64,
    pub snapshots: Vec<OracleSnapshot>,
}

impl OracleRun {
    pub fn last(&self) -> &OracleSnapshot {
        self.snapshots.last().expect("at least one snapshot")
    }

    /// Writes `t,C_emp,Q_emp,se_C,se_Q`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "C_emp", "Q_emp", "se_C", "se_Q"])?;
        for s in &self.snapshots {
            w.write_record([s.t, s.c_emp, s.q_emp, s.se_c, s.se_q].iter().map(|v| format!("{v:e}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Uniform draw in `(0, 1)` from the top 53 bits.
fn unit(rng: &mut ChaCha8Rng) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal by Box-Muller from two uniforms (the sine half is dropped).
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let (u1, u2) = (unit(rng), unit(rng));
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Cumulative node probabilities `w_ij g_ij / mass`, `a`-major.
fn node_cdf(grid: &Grid2D, g0: &Field) -> Result<Vec<f64>> {
    let (n_a, n_z) = grid.shape();
    let mut cdf = Vec::with_capacity(n_a * n_z);
    let mut acc = 0.0;
    for i in 0..n_a {
        for j in 0..n_z {
            acc += grid.weight(i, j) * g0.get(i, j).max(0.0);
            cdf.push(acc);
        }
    }
    if !(acc > 0.0) {
        return Err(SolverError::Config("initial density has no mass to sample".into()));
    }
    for c in &mut cdf {
        *c /= acc;
    }
    Ok(cdf)
}

/// Bilinear interpolation of `u` at `(a, z)`, clamped to the grid.
pub fn bilinear(grid: &Grid2D, u: &Field, a: f64, z: f64) -> f64 {
    let (n_a, n_z) = grid.shape();
    let locate = |x: f64, x0: f64, h: f64, n: usize| {
        let s = ((x - x0) / h).clamp(0.0, (n - 1) as f64);
        let i = (s.floor() as usize).min(n - 2);
        (i, s - i as f64)
    };
    let (i, fa) = locate(a, grid.a_nodes()[0], grid.h_a(), n_a);
    let (j, fz) = locate(z, grid.z_nodes()[0], grid.h_z(), n_z);
    let v00 = u.get(i, j);
    let v10 = u.get(i + 1, j);
    let v01 = u.get(i, j + 1);
    let v11 = u.get(i + 1, j + 1);
    (1.0 - fa) * ((1.0 - fz) * v00 + fz * v01) + fa * ((1.0 - fz) * v10 + fz * v11)
}

#[derive(Clone, Copy, Default)]
struct Sums {
    c: f64,
    c2: f64,
    q: f64,
    q2: f64,
}

/// Simulates `opts.particles` particles started from `g_0` (the first density
/// of `state`) and records empirical `C` and `Q` with standard errors.
pub fn run_oracle(disc: &Discretization, spec: &CutoffSpec, state: &IterationState, opts: &OracleOptions) -> Result<OracleRun> {
    if opts.particles < 2 || opts.stride == 0 {
        return Err(SolverError::Config("oracle needs at least 2 particles and stride >= 1".into()));
    }
    let grid = &disc.grid;
    let model = &disc.model;
    let time = state.time;
    let n_t = time.n_t();
    let dt = time.dt();
    let sqrt_dt = dt.sqrt();
    let (z_lo, z_hi) = grid.z_bounds();
    let outer = spec.outer_limit();
    let recorded: Vec<usize> = (0..=n_t).filter(|k| k % opts.stride == 0 || *k == n_t).collect();
    let cdf = node_cdf(grid, state.g.get(0))?;
    let n_z = grid.n_z();

    let theta_at = |k: usize, a: f64, z: f64| {
        let y = bilinear(grid, state.y.get(k), a, z);
        model.theta_c(y, state.f[k], spec.w_floor)
    };

    let simulate = |p: usize, sums: &mut [Sums]| -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(p as u64);
        let u = unit(&mut rng);
        let node = cdf.partition_point(|c| *c < u).min(cdf.len() - 1);
        let (mut a, mut z) = (grid.a_nodes()[node / n_z], grid.z_nodes()[node % n_z]);
        let mut slot = 0;
        for k in 0..=n_t {
            let theta = theta_at(k, a, z);
            if recorded[slot] == k {
                let q = z + theta;
                let s = &mut sums[slot];
                s.c += a;
                s.c2 += a * a;
                s.q += q;
                s.q2 += q * q;
                slot += 1;
            }
            if k == n_t {
                break;
            }
            let (sigma, mu) = (model.income.sigma(z), model.income.mu(z));
            let speed = spec.chi(a) * (z + state.r[k] * a + theta);
            a += speed * dt;
            z = (z + mu * dt + sigma * sqrt_dt * normal(&mut rng)).clamp(z_lo, z_hi);
            if a.abs() > outer {
                return Err(SolverError::ParticleEscape { particle: p, step: k + 1, a });
            }
        }
        Ok(())
    };

    let n_chunks = opts.particles.div_ceil(CHUNK);
    let partial: Vec<Vec<Sums>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut sums = vec![Sums::default(); recorded.len()];
            for p in c * CHUNK..((c + 1) * CHUNK).min(opts.particles) {
                simulate(p, &mut sums)?;
            }
            Ok(sums)
        })
        .collect::<Result<_>>()?;

    let n = opts.particles as f64;
    let snapshots = recorded
        .iter()
        .enumerate()
        .map(|(slot, &k)| {
            let mut tot = Sums::default();
            for chunk in &partial {
                let s = chunk[slot];
                tot.c += s.c;
                tot.c2 += s.c2;
                tot.q += s.q;
                tot.q2 += s.q2;
            }
            let se = |sum: f64, sum2: f64| {
                let mean = sum / n;
                let var = ((sum2 - n * mean * mean) / (n - 1.0)).max(0.0);
                (mean, (var / n).sqrt())
            };
            let (c_emp, se_c) = se(tot.c, tot.c2);
            let (q_emp, se_q) = se(tot.q, tot.q2);
            OracleSnapshot {
                t_index: k,
                t: time.t(k),
                c_emp,
                q_emp,
                se_c,
                se_q,
            }
        })
        .collect();
    Ok(OracleRun {
        particles: opts.particles,
        seed: opts.seed,
        snapshots,
    })
}

/// Particle estimate against the grid value for one moment at `T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentAgreement {
    pub grid: f64,
    pub empirical: f64,
    pub difference: f64,
    pub se: f64,
    /// `3 SE + C_DISC_ORACLE (dt + h_a)`.
    pub bound: f64,
    pub passed: bool,
}

impl MomentAgreement {
    fn new(grid: f64, empirical: f64, se: f64, slack: f64) -> Self {
        let difference = (empirical - grid).abs();
        let bound = 3.0 * se + slack;
        MomentAgreement {
            grid,
            empirical,
            difference,
            se,
            bound,
            passed: difference <= bound,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleAgreement {
    pub c: MomentAgreement,
    pub q: MomentAgreement,
    pub c_disc: f64,
    pub passed: bool,
}

/// Compares the final snapshot of `run` with the grid values `C(T)`, `Q(T)`.
pub fn oracle_agreement(run: &OracleRun, c_grid: f64, q_grid: f64, dt: f64, h_a: f64) -> OracleAgreement {
    let last = run.last();
    let slack = C_DISC_ORACLE * (dt + h_a);
    let c = MomentAgreement::new(c_grid, last.c_emp, last.se_c, slack);
    let q = MomentAgreement::new(q_grid, last.q_emp, last.se_q, slack);
    OracleAgreement {
        c,
        q,
        c_disc: C_DISC_ORACLE,
        passed: c.passed && q.passed,
    }
}
