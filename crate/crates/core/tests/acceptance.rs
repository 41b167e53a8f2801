//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Runs as a plain binary (`harness = false`) so the lines are
//! always printed.

use std::time::Instant;

use mfg_wealth::coupling::state_difference;
use mfg_wealth::diagnostics::predict_c;
use mfg_wealth::oracle::{oracle_agreement, run_oracle, OracleOptions};
use mfg_wealth::tolerances::{discretization_bound, MASS_TOL, Q_DATA_TOL};
use mfg_wealth::*;

struct Solved {
    problem: Problem,
    spec: CutoffSpec,
    state: IterationState,
    report: IterationReport,
    moments: MomentSeries,
    invariants: InvariantReport,
}

fn solve(cfg: &RunConfig) -> Solved {
    let problem = cfg.build().expect("config builds");
    let (disc, g0, y_t) = (&problem.disc, &problem.g0, &problem.y_t);
    let spec = compute_floors(&disc.model, &disc.grid, g0, y_t).expect("data accepted");
    let (state, report) = picard_solve(disc, g0, y_t, &cfg.picard_options()).expect("solve converges");
    let moments = MomentSeries::compute(disc, &spec, &state);
    let invariants = run_invariant_suite(disc, &spec, &state);
    Solved { problem, spec, state, report, moments, invariants }
}

fn preset(name: &str, n_a: usize, n_z: usize) -> RunConfig {
    RunConfig { n_a, n_z, ..RunConfig::preset(name).unwrap() }
}

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn bound_of(s: &Solved) -> f64 {
    let g = &s.problem.disc.grid;
    discretization_bound(s.state.time.dt(), g.h_a(), g.h_z())
}

fn hamiltonian_algebra() -> Outcome {
    let mut worst_order = f64::INFINITY;
    let mut worst_value = 0.0f64;
    let mut min_hpp = f64::INFINITY;
    for gamma in [0.5, 2.0, 3.0] {
        let u = Crra::new(gamma).unwrap();
        // closed forms written out independently of the crate
        let h = |p: f64| gamma / (1.0 - gamma) * p.powf(1.0 - 1.0 / gamma);
        let h_p = |p: f64| -p.powf(-1.0 / gamma);
        let h_pp = |p: f64| p.powf(-1.0 / gamma - 1.0) / gamma;
        for p in [0.3, 0.7, 1.0, 1.9, 4.0] {
            for (got, want) in [(u.hamiltonian(p), h(p)), (u.h_p(p), h_p(p)), (u.h_pp(p), h_pp(p))] {
                worst_value = worst_value.max((got - want).abs() / (1.0 + want.abs()));
            }
            let (d1, d2) = (1e-2 * p, 5e-3 * p);
            let fd = |f: &dyn Fn(f64) -> f64, d: f64| (f(p + d) - f(p - d)) / (2.0 * d);
            let pairs: [(&dyn Fn(f64) -> f64, f64); 2] = [(&|q| u.hamiltonian(q), u.h_p(p)), (&|q| u.h_p(q), u.h_pp(p))];
            for (f, exact) in pairs {
                let e1 = (fd(f, d1) - exact).abs();
                let e2 = (fd(f, d2) - exact).abs();
                worst_order = worst_order.min((e1 / e2).log2());
            }
        }
        for k in 0..1000 {
            let p = 10f64.powf(-3.0 + 6.0 * k as f64 / 999.0);
            min_hpp = min_hpp.min(u.h_pp(p));
        }
    }
    outcome(
        worst_order >= 1.9 && min_hpp > 0.0 && worst_value < 1e-12,
        format!("min FD order {worst_order:.3} (>= 1.9), min H_pp {min_hpp:.3e} (> 0), closed-form mismatch {worst_value:.1e}"),
    )
}

fn mass_conservation(runs: &[&Solved]) -> Outcome {
    let dev = runs
        .iter()
        .flat_map(|s| s.moments.mass.iter())
        .map(|m| (m - 1.0).abs())
        .fold(0.0, f64::max);
    outcome(dev <= MASS_TOL, format!("max |mass - 1| = {dev:.2e} over {} runs (<= {MASS_TOL:e})", runs.len()))
}

fn positivity_and_floors(runs: &[&Solved]) -> Outcome {
    let mut ok = true;
    let mut worst_margin = f64::INFINITY;
    let mut worst_k = f64::INFINITY;
    for s in runs {
        let w_inf = s.problem.disc.model.config.w_inf;
        let (margin, _, _) = s.state.positivity_margin(w_inf);
        let rel_margin = margin / (0.5 * s.spec.w_floor);
        let k_min = s.moments.k.iter().chain(s.state.k.values()).fold(f64::INFINITY, |a, b| a.min(*b));
        let rel_k = k_min / s.spec.k_floor;
        let records_ok = s.report.records.iter().all(|r| r.k_min >= s.spec.k_floor && r.margin_min >= 0.5 * s.spec.w_floor);
        ok &= rel_margin >= 1.0 && rel_k >= 1.0 && records_ok;
        worst_margin = worst_margin.min(rel_margin);
        worst_k = worst_k.min(rel_k);
    }
    outcome(ok, format!("min margin / (W/2) = {worst_margin:.4}, min K / K_floor = {worst_k:.4} (both >= 1, every iterate)"))
}

fn q_deviation(s: &Solved) -> f64 {
    let q0 = s.moments.q[0];
    s.moments.q.iter().map(|q| (q - q0).abs()).fold(0.0, f64::max)
}

fn relaxed_constraint(coarse: &Solved, fine: &Solved) -> Outcome {
    let (dc, df) = (q_deviation(coarse), q_deviation(fine));
    let (bc, bf) = (bound_of(coarse), bound_of(fine));
    let order = (dc / df).log2();
    outcome(
        dc <= bc && df <= bf && order >= 0.8,
        format!("max|Q - Q(0)| = {dc:.3e} (<= {bc:.3e}) -> {df:.3e} (<= {bf:.3e}), observed order {order:.2} (>= 0.8)"),
    )
}

fn moment_ode(runs: &[&Solved]) -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for s in runs {
        let q = ScalarPath::new(s.moments.q.clone());
        let pred = predict_c(s.moments.c[0], &s.state.r, &q, &s.state.time);
        let dev = s.moments.c.iter().zip(pred.values()).map(|(c, p)| (c - p).abs()).fold(0.0, f64::max);
        let b = bound_of(s);
        ok &= dev <= b;
        detail.push(format!("{dev:.2e} <= {b:.2e}"));
    }
    outcome(ok, format!("sup_t |C - predict_C| per run: {}", detail.join(", ")))
}

fn fixed_point(consistency: &Solved, generic: &Solved) -> Outcome {
    let rho = consistency.problem.disc.model.config.rho;
    let r_dev = consistency.state.r.values().iter().map(|r| (r - rho).abs()).fold(0.0, f64::max);
    let last_energy = consistency.report.records.last().unwrap().energy;
    let n_iters = consistency.report.n_iters;
    let c_ok = consistency.report.converged && n_iters <= 10 && r_dev <= 1e-6 && last_energy < 1e-8;

    let energies: Vec<f64> = generic.report.records.iter().map(|r| r.energy).collect();
    let tail = &energies[energies.len().saturating_sub(3)..];
    let decreasing = tail.windows(2).all(|w| w[1] < w[0]);
    let ratio = generic.report.contraction_ratio;
    let g_ok = generic.report.converged && decreasing && ratio.is_some_and(|r| r < 1.0);
    outcome(
        c_ok && g_ok,
        format!(
            "consistency: {n_iters} iters, max|r - rho| = {r_dev:.2e}, final energy {last_energy:.2e}; generic: energies {:?}, ratio {:?}",
            energies.iter().map(|e| format!("{e:.1e}")).collect::<Vec<_>>(),
            ratio.map(|r| format!("{r:.2e}"))
        ),
    )
}

fn uniqueness_witness(generic: &Solved) -> Outcome {
    let cfg = RunConfig { initial_rate: generic.problem.disc.model.config.rho, ..preset("generic", 64, 32) };
    let twin = solve(&cfg);
    let tol = cfg.tol;
    if twin.state.time != generic.state.time {
        return outcome(false, "twin solves chose different time grids".into());
    }
    let diff = state_difference(&generic.problem.disc, &generic.state, &twin.state).unwrap().total();
    outcome(diff <= 10.0 * tol, format!("difference energy between r0 = 0 and r0 = rho solves {diff:.2e} (<= {:.0e})", 10.0 * tol))
}

fn nonexistence(s: &Solved) -> Outcome {
    let (disc, g0, y_t) = (&s.problem.disc, &s.problem.g0, &s.problem.y_t);
    let qd = q_data(disc, g0, y_t).unwrap();
    let c0 = s.moments.c[0];
    let c_t = *s.moments.c.last().unwrap();
    let q = ScalarPath::new(s.moments.q.clone());
    let pred = predict_c(c0, &s.state.r, &q, &s.state.time).last();
    let b = bound_of(s);
    let horizon = disc.model.config.horizon;
    let ok = (qd - 0.5).abs() <= Q_DATA_TOL
        && c0.abs() <= 1e-12
        && (c_t - pred).abs() <= b
        && c_t.abs() > b
        && c_t >= 0.5 * qd * horizon;
    outcome(
        ok,
        format!("Q_data = {qd:.10}, C(0) = {c0:.1e}, C(T) = {c_t:.4e}, predict_C(T) = {pred:.4e} (tol {b:.2e}); C(T) stays away from 0"),
    )
}

fn oracle_equivalence() -> Outcome {
    let s = solve(&preset("consistency", 128, 64));
    let disc = &s.problem.disc;
    let opts = OracleOptions { particles: 100_000, seed: 2024, stride: 10 };
    let start = Instant::now();
    let run = run_oracle(disc, &s.spec, &s.state, &opts).unwrap();
    let repeat = run_oracle(disc, &s.spec, &s.state, &opts).unwrap();
    let elapsed = start.elapsed().as_secs_f64() / 2.0;
    let (c_t, q_t) = (*s.moments.c.last().unwrap(), *s.moments.q.last().unwrap());
    let check = oracle_agreement(&run, c_t, q_t, s.state.time.dt(), disc.grid.h_a());
    let identical = run == repeat;
    outcome(
        check.passed && identical && elapsed <= 120.0,
        format!(
            "|C_emp(T) - C(T)| = {:.2e} (<= {:.2e} = 3 SE + dt + h_a), |Q_emp(T) - Q(T)| = {:.2e} (<= {:.2e}), repeat bit-identical: {identical}, {elapsed:.1} s per run",
            check.c.difference, check.c.bound, check.q.difference, check.q.bound
        ),
    )
}

fn support_confinement(runs: &[&Solved]) -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for s in runs {
        let r = &s.report;
        let horizon = s.problem.disc.model.config.horizon;
        let limit = s.spec.inner_limit();
        ok &= horizon < r.admissible_horizon && r.support_g <= limit && r.support_y <= limit;
        detail.push(format!(
            "T = {horizon} < {:.3}: g {:.3}, y {:.3} <= {limit}",
            r.admissible_horizon, r.support_g, r.support_y
        ));
    }
    outcome(ok, detail.join("; "))
}

fn main() {
    let start = Instant::now();
    let consistency = solve(&preset("consistency", 128, 64));
    let generic_coarse = solve(&preset("generic", 64, 32));
    let generic_fine = solve(&preset("generic", 128, 64));
    let nonexist = solve(&preset("nonexistence", 256, 32));
    let all = [&consistency, &generic_coarse, &generic_fine, &nonexist];

    for s in all {
        if !s.invariants.all_passed() {
            eprintln!("invariant report:\n{}", s.invariants.to_kv_text());
        }
    }

    let results = [
        ("hamiltonian_algebra", hamiltonian_algebra()),
        ("mass_conservation", mass_conservation(&all)),
        ("positivity_and_floors", positivity_and_floors(&all)),
        ("relaxed_constraint", relaxed_constraint(&generic_coarse, &generic_fine)),
        ("moment_ode_consistency", moment_ode(&all)),
        ("fixed_point_behavior", fixed_point(&consistency, &generic_coarse)),
        ("uniqueness_witness", uniqueness_witness(&generic_coarse)),
        ("nonexistence_reproduction", nonexistence(&nonexist)),
        ("oracle_equivalence", oracle_equivalence()),
        ("support_confinement", support_confinement(&all)),
    ];

    let mut failed = 0;
    for (name, o) in &results {
        println!("{} {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.passed);
    }
    println!(
        "acceptance: {} passed, {failed} failed ({:.1} s)",
        results.len() - failed,
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
