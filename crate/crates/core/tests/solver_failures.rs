use mfg_wealth::*;

fn coarse(name: &str) -> RunConfig {
    RunConfig { n_a: 48, n_z: 24, ..RunConfig::preset(name).unwrap() }
}

fn solve(cfg: &RunConfig) -> Result<(IterationState, IterationReport)> {
    let p = cfg.build()?;
    picard_solve(&p.disc, &p.g0, &p.y_t, &cfg.picard_options())
}

#[test]
fn horizon_ten_times_the_bound_escapes() {
    let (_, report) = solve(&coarse("generic")).unwrap();
    let cfg = RunConfig { horizon: 10.0 * report.admissible_horizon, ..coarse("generic") };
    match solve(&cfg) {
        Err(SolverError::SupportEscape { extent, limit, iter, .. }) => {
            assert!(extent > limit);
            assert!(iter >= 1);
        }
        other => panic!("expected a support escape, got {other:?}"),
    }
}

#[test]
fn negative_terminal_wealth_is_rejected() {
    let cfg = RunConfig { yt_kind: "bump".into(), yt_amplitude: -1.5, ..coarse("consistency") };
    assert!(matches!(solve(&cfg), Err(SolverError::DataRejected { w_floor }) if w_floor < 0.0));
}

#[test]
fn one_iteration_with_zero_tolerance_does_not_converge() {
    let cfg = RunConfig { tol: 0.0, max_iters: 1, ..coarse("generic") };
    assert!(matches!(solve(&cfg), Err(SolverError::NonConvergence { iters: 1, .. })));
}

#[test]
fn too_few_time_steps_violate_the_stability_bound() {
    let cfg = RunConfig { n_t: 3, ..coarse("generic") };
    assert!(matches!(solve(&cfg), Err(SolverError::Cfl { iter: 1, .. })));
}

#[test]
fn unsafe_safety_factor_is_a_config_error() {
    let cfg = RunConfig { cfl_safety: 0.5, ..coarse("generic") };
    assert!(matches!(solve(&cfg), Err(SolverError::Config(_))));
}

#[test]
fn large_initial_rate_breaks_the_k_floor() {
    // gamma = 1/4: K scales like f^-4, and r0 = 2 pushes f^1(0) to about e^0.2
    let cfg = RunConfig {
        gamma: 0.25,
        initial_rate: 2.0,
        g0_a_radius: 0.3,
        g0_a_width: 0.2,
        n_a: 96,
        ..coarse("consistency")
    };
    match solve(&cfg) {
        Err(SolverError::KFloor { k, floor, .. }) => assert!(k < floor),
        other => panic!("expected a K floor violation, got {other:?}"),
    }
}

#[test]
fn fixed_time_grid_is_honoured() {
    let cfg = RunConfig { n_t: 400, ..coarse("consistency") };
    let (state, report) = solve(&cfg).unwrap();
    assert_eq!(state.time.n_t(), 400);
    assert_eq!(report.n_t, 400);
    assert!((report.dt - 0.1 / 400.0).abs() < 1e-15);
}
