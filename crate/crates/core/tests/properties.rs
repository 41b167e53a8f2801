use mfg_wealth::dynamics::solve_f;
use mfg_wealth::model::{chi, psi};
use mfg_wealth::*;
use proptest::prelude::*;

fn disc(sigma_bar: f64, kappa: f64) -> Discretization {
    let cfg = ModelConfig { sigma_bar, kappa, ..ModelConfig::default() };
    Discretization::new(Model::new(cfg).unwrap(), 24, 16).unwrap()
}

fn random_field(grid: &Grid2D, seed: &[f64]) -> Field {
    let n = seed.len();
    let (n_a, n_z) = grid.shape();
    let mut k = 0;
    let mut v = ndarray::Array2::zeros((n_a, n_z));
    for i in 0..n_a {
        for j in 0..n_z {
            v[[i, j]] = seed[k % n];
            k += 1;
        }
    }
    Field::from_array(v)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn density_step_conserves_mass_and_sign(
        vals in prop::collection::vec(0.0f64..1.0, 37),
        theta_vals in prop::collection::vec(-1.5f64..0.5, 11),
        sigma_bar in 0.0f64..0.5,
        kappa in -0.2f64..0.2,
        r in -0.3f64..0.3,
    ) {
        let d = disc(sigma_bar, kappa);
        let g = random_field(&d.grid, &vals);
        let theta = random_field(&d.grid, &theta_vals);
        let dt = cfl_dt(&d, r.abs(), theta.max_abs(), mfg_wealth::dynamics::MONOTONE_SAFETY).unwrap();
        let next = step_g_forward(&d, &g, &theta, r, dt).unwrap();
        let (m0, m1) = (d.grid.integrate(&g), d.grid.integrate(&next));
        prop_assert!((m0 - m1).abs() <= 1e-13 * (1.0 + m0));
        prop_assert!(next.min() >= -1e-14);
    }

    #[test]
    fn value_step_obeys_a_maximum_principle(
        vals in prop::collection::vec(-1.0f64..1.0, 29),
        theta_vals in prop::collection::vec(-1.5f64..0.5, 7),
        sigma_bar in 0.0f64..0.5,
        kappa in -0.2f64..0.2,
    ) {
        // with r = rho the zeroth-order term vanishes and the update is a convex combination
        let d = disc(sigma_bar, kappa);
        let rho = d.model.config.rho;
        let y = random_field(&d.grid, &vals);
        let theta = random_field(&d.grid, &theta_vals);
        let dt = cfl_dt(&d, rho, theta.max_abs(), mfg_wealth::dynamics::MONOTONE_SAFETY).unwrap();
        let next = step_y_backward(&d, &y, &theta, rho, dt).unwrap();
        prop_assert!(next.max() <= y.max() + 1e-13);
        prop_assert!(next.min() >= y.min() - 1e-13);
    }

    #[test]
    fn cutoffs_stay_in_range(x in -10.0f64..10.0, w in 0.01f64..5.0, a in -10.0f64..10.0, half in 0.1f64..3.0) {
        let c = chi(a, half);
        prop_assert!((0.0..=1.0).contains(&c));
        if a.abs() <= 2.0 * half { prop_assert_eq!(c, 1.0); }
        if a.abs() >= 3.0 * half { prop_assert_eq!(c, 0.0); }
        let p = psi(x, w);
        prop_assert!(p >= 0.25 * w - 1e-15);
        if x >= 0.5 * w { prop_assert_eq!(p, x); }
        prop_assert!(psi(x + 1e-3, w) >= p - 1e-15);
    }

    #[test]
    fn discount_factor_is_positive_and_ends_at_one(rs in prop::collection::vec(-1.0f64..1.0, 2..40), rho in 0.0f64..0.2) {
        let time = TimeGrid::new(0.5, rs.len() - 1).unwrap();
        let f = solve_f(&ScalarPath::new(rs), rho, &time);
        prop_assert!(f.values().iter().all(|v| *v > 0.0));
        prop_assert_eq!(f.last(), 1.0);
    }

    #[test]
    fn predicted_c_is_affine_in_its_data(
        c0 in -1.0f64..1.0, c1 in -1.0f64..1.0,
        r in prop::collection::vec(-0.5f64..0.5, 9),
        q in prop::collection::vec(-1.0f64..1.0, 9),
    ) {
        let time = TimeGrid::new(1.0, 8).unwrap();
        let r = ScalarPath::new(r);
        let q = ScalarPath::new(q);
        let zero = ScalarPath::constant(9, 0.0);
        let full = mfg_wealth::diagnostics::predict_c(c0 + c1, &r, &q, &time);
        let a = mfg_wealth::diagnostics::predict_c(c0, &r, &q, &time);
        let b = mfg_wealth::diagnostics::predict_c(c1, &r, &zero, &time);
        for k in 0..9 {
            prop_assert!((full[k] - a[k] - b[k]).abs() < 1e-12);
        }
    }
}
