//! Batch driver: `solve`, `check-data`, `validate` and `particles`.

mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mfg_wealth::coupling::state_difference;
use mfg_wealth::oracle::{oracle_agreement, run_oracle};
use mfg_wealth::tolerances::Q_DATA_TOL;
use mfg_wealth::{
    compute_floors, moment_c, picard_solve, q_data, run_invariant_suite, CutoffSpec, IterationReport, IterationState,
    MomentSeries, Problem, RunConfig, SolverError,
};
use serde_json::json;

/// Exit codes. Every failure mode maps to exactly one of these.
mod code {
    pub const USAGE: u8 = 2;
    pub const DATA_REJECTED: u8 = 3;
    pub const K_FLOOR: u8 = 4;
    pub const POSITIVITY: u8 = 5;
    pub const SUPPORT: u8 = 6;
    pub const NON_CONVERGENCE: u8 = 7;
    pub const CFL: u8 = 8;
    pub const INVARIANT: u8 = 9;
    pub const ORACLE: u8 = 10;
    pub const IO: u8 = 11;
    pub const OTHER: u8 = 12;
}

#[derive(Parser)]
#[command(name = "mfg-wealth", version, about = "Picard solver for the relaxed wealth-distribution model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve and write moments, snapshots and reports.
    Solve(Common),
    /// Report W, K_data, Q_data, C(0) and whether the original constraint can hold.
    CheckData(Common),
    /// Solve, run the invariant suite and a twin solve started from r = rho.
    Validate(Common),
    /// Solve, then run the particle oracle against the converged paths.
    Particles(Common),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    particles: Option<usize>,
    /// Snapshot and oracle recording stride, in time steps.
    #[arg(long)]
    stride: Option<usize>,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Failure { code, message: message.into() }
    }
}

impl From<SolverError> for Failure {
    fn from(e: SolverError) -> Self {
        let code = match &e {
            SolverError::Config(_) | SolverError::GridMismatch(_) => code::USAGE,
            SolverError::DataRejected { .. } => code::DATA_REJECTED,
            SolverError::KFloor { .. } => code::K_FLOOR,
            SolverError::PositivityFloor { .. } => code::POSITIVITY,
            SolverError::SupportEscape { .. } => code::SUPPORT,
            SolverError::NonConvergence { .. } => code::NON_CONVERGENCE,
            SolverError::Cfl { .. } => code::CFL,
            SolverError::ParticleEscape { .. } => code::ORACLE,
            SolverError::Io(_) => code::IO,
            SolverError::Domain { .. } | SolverError::DegenerateStep(_) | SolverError::Integration { .. } => code::OTHER,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::new(code::IO, e.to_string())
    }
}

type CliResult<T> = Result<T, Failure>;

fn load_config(c: &Common) -> CliResult<RunConfig> {
    let mut cfg = match &c.config {
        Some(path) => RunConfig::load(path).map_err(|e| match e {
            SolverError::Io(m) => Failure::new(code::USAGE, format!("cannot read config: {m}")),
            other => Failure::new(code::USAGE, other.to_string()),
        })?,
        None => RunConfig::default(),
    };
    if let Some(out) = &c.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(n) = c.particles {
        cfg.particles = n;
    }
    if let Some(s) = c.stride {
        cfg.stride = s;
    }
    if cfg.stride == 0 {
        return Err(Failure::new(code::USAGE, "stride must be >= 1"));
    }
    Ok(cfg)
}

struct Solved {
    problem: Problem,
    spec: CutoffSpec,
    state: IterationState,
    report: IterationReport,
    moments: MomentSeries,
}

fn solve(cfg: &RunConfig) -> CliResult<Solved> {
    let problem = cfg.build()?;
    let spec = compute_floors(&problem.disc.model, &problem.disc.grid, &problem.g0, &problem.y_t)?;
    let (state, report) = picard_solve(&problem.disc, &problem.g0, &problem.y_t, &cfg.picard_options())?;
    let moments = MomentSeries::compute(&problem.disc, &spec, &state);
    Ok(Solved { problem, spec, state, report, moments })
}

/// Solves and writes the standard outputs.
fn solve_and_write(cfg: &RunConfig) -> CliResult<Solved> {
    output::prepare(cfg)?;
    let s = solve(cfg)?;
    output::write_solution(cfg, &s.problem, &s.state, &s.report, &s.moments)?;
    println!(
        "converged in {} iterations (n_t = {}, dt = {:e}); admissible T bound {:e}; contraction ratio {}",
        s.report.n_iters,
        s.report.n_t,
        s.report.dt,
        s.report.admissible_horizon,
        s.report.contraction_ratio.map_or("n/a".into(), |r| format!("{r:e}"))
    );
    Ok(s)
}

fn cmd_solve(cfg: &RunConfig) -> CliResult<()> {
    let s = solve_and_write(cfg)?;
    let invariants = run_invariant_suite(&s.problem.disc, &s.spec, &s.state);
    output::write_invariants(cfg, &invariants)?;
    for c in invariants.failures() {
        eprintln!("warning: invariant {} flagged (measured {:e}, tolerance {:e})", c.name, c.measured, c.tolerance);
    }
    Ok(())
}

fn cmd_check_data(cfg: &RunConfig) -> CliResult<()> {
    output::prepare(cfg)?;
    let p = cfg.build()?;
    let spec = compute_floors(&p.disc.model, &p.disc.grid, &p.g0, &p.y_t)?;
    let qd = q_data(&p.disc, &p.g0, &p.y_t)?;
    let c0 = moment_c(&p.disc.grid, &p.g0);
    let (verdict, explanation) = if qd.abs() <= Q_DATA_TOL {
        if c0.abs() <= Q_DATA_TOL {
            ("constraint-compatible", "Q_data = 0 and C(0) = 0: the relaxed solution keeps C = 0")
        } else {
            ("initial-moment-nonzero", "C(0) != 0: the data already violate C = 0")
        }
    } else if c0.abs() <= Q_DATA_TOL {
        ("infeasible", "original problem infeasible for small T: Q_data != 0 with C(0) = 0 forces C_t(0) != 0")
    } else {
        ("initial-moment-nonzero", "C(0) != 0: the data already violate C = 0")
    };
    let report = json!({
        "verdict": verdict,
        "explanation": explanation,
        "w_floor": spec.w_floor,
        "k_data": spec.k_data,
        "k_floor": spec.k_floor,
        "q_data": qd,
        "c0": c0,
        "tolerance": Q_DATA_TOL,
    });
    output::write_json(cfg, "data_report.json", &report)?;
    println!("W = {:e}\nK_data = {:e}\nQ_data = {qd:e}\nC(0) = {c0:e}", spec.w_floor, spec.k_data);
    println!("verdict: {verdict} ({explanation})");
    Ok(())
}

fn cmd_validate(cfg: &RunConfig) -> CliResult<()> {
    let s = solve_and_write(cfg)?;
    let invariants = run_invariant_suite(&s.problem.disc, &s.spec, &s.state);
    output::write_invariants(cfg, &invariants)?;

    let twin_cfg = RunConfig { initial_rate: cfg.rho, ..cfg.clone() };
    let twin = solve(&twin_cfg)?;
    let (energy, same_grid) = if twin.state.time == s.state.time {
        (state_difference(&s.problem.disc, &s.state, &twin.state)?.total(), true)
    } else {
        (f64::INFINITY, false)
    };
    let twin_ok = same_grid && energy <= 10.0 * cfg.tol;
    let report = json!({
        "invariants_passed": invariants.all_passed(),
        "twin_initial_rate": cfg.rho,
        "twin_same_time_grid": same_grid,
        "twin_difference_energy": energy,
        "twin_tolerance": 10.0 * cfg.tol,
        "twin_passed": twin_ok,
    });
    output::write_json(cfg, "validation_report.json", &report)?;

    if let Some(c) = invariants.failures().next() {
        return Err(Failure::new(
            code::INVARIANT,
            format!("invariant {} failed: measured {:e}, tolerance {:e} at {}", c.name, c.measured, c.tolerance, c.location),
        ));
    }
    if !twin_ok {
        return Err(Failure::new(
            code::INVARIANT,
            format!("invariant twin_uniqueness failed: difference energy {energy:e} > {:e}", 10.0 * cfg.tol),
        ));
    }
    println!("all invariants pass; twin difference energy {energy:e}");
    Ok(())
}

fn cmd_particles(cfg: &RunConfig) -> CliResult<()> {
    let s = solve_and_write(cfg)?;
    let run = run_oracle(&s.problem.disc, &s.spec, &s.state, &cfg.oracle_options())?;
    output::write_oracle_csv(cfg, &run)?;
    let c_t = *s.moments.c.last().expect("nonempty");
    let q_t = *s.moments.q.last().expect("nonempty");
    let check = oracle_agreement(&run, c_t, q_t, s.state.time.dt(), s.problem.disc.grid.h_a());
    output::write_json(cfg, "oracle_report.json", &json!({ "particles": run.particles, "seed": run.seed, "agreement": check }))?;
    let line = format!(
        "C(T): grid {:e}, particles {:e}, gap {:e} (bound {:e}); Q(T): grid {:e}, particles {:e}, gap {:e} (bound {:e})",
        check.c.grid, check.c.empirical, check.c.difference, check.c.bound, check.q.grid, check.q.empirical, check.q.difference, check.q.bound
    );
    if !check.passed {
        return Err(Failure::new(code::ORACLE, format!("oracle disagreement: {line}")));
    }
    println!("{line}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { code::USAGE } else { 0 });
        }
    };
    let (common, run): (&Common, fn(&RunConfig) -> CliResult<()>) = match &cli.command {
        Command::Solve(c) => (c, cmd_solve),
        Command::CheckData(c) => (c, cmd_check_data),
        Command::Validate(c) => (c, cmd_validate),
        Command::Particles(c) => (c, cmd_particles),
    };
    match load_config(common).and_then(|cfg| run(&cfg)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
