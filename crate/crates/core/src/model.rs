//! Economic primitives: utility and Hamiltonian, income coefficients, the
//! wealth cutoff `chi`, the Hamiltonian-argument floor `psi`, and the data
//! floors `W` and `K_data`.
//!
//! The Hamiltonian is `H(p) = max_c (-c p + u(c)) = -p c*(p) + u(c*(p))` with
//! `c*(p) = (u')^{-1}(p)`, so `H_p = -(u')^{-1}` and `H_pp > 0` whenever `u` is
//! strictly concave. Every routine that feeds a state-dependent argument to
//! `H_p` or `H_pp` passes it through `psi` first, so those arguments stay at or
//! above `W/4`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SolverError};
use crate::grid::{Field, Grid2D};

/// Continuous-model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Discount rate.
    pub rho: f64,
    /// Shift constant `w_inf` in `y = v_a - f w_inf`.
    pub w_inf: f64,
    /// CRRA exponent.
    pub gamma: f64,
    /// Time horizon `T`.
    pub horizon: f64,
    /// Support half-width `A`; the computational domain in wealth is `[-3A, 3A]`.
    pub half_width: f64,
    pub z_min: f64,
    pub z_max: f64,
    /// Diffusion amplitude of the income process.
    pub sigma_bar: f64,
    /// Drift amplitude of the income process.
    pub kappa: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            rho: 0.05,
            w_inf: 1.0,
            gamma: 2.0,
            horizon: 0.1,
            half_width: 1.0,
            z_min: 0.5,
            z_max: 1.5,
            sigma_bar: 0.0,
            kappa: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(SolverError::Config(msg.to_string()));
        let all = [
            self.rho,
            self.w_inf,
            self.gamma,
            self.horizon,
            self.half_width,
            self.z_min,
            self.z_max,
            self.sigma_bar,
            self.kappa,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("model parameters must be finite");
        }
        if self.rho <= 0.0 {
            return bad("rho must be > 0");
        }
        if self.w_inf <= 0.0 {
            return bad("w_inf must be > 0");
        }
        if self.gamma <= 0.0 || self.gamma == 1.0 {
            return bad("gamma must be > 0 and != 1");
        }
        if self.z_min >= self.z_max {
            return bad("z_min must be < z_max");
        }
        if self.half_width <= 0.0 {
            return bad("half_width must be > 0");
        }
        if self.horizon <= 0.0 {
            return bad("horizon must be > 0");
        }
        if self.sigma_bar < 0.0 {
            return bad("sigma_bar must be >= 0");
        }
        Ok(())
    }
}

/// A consumer utility whose marginal utility maps `(0, inf)` onto `(0, inf)`.
///
/// Implementors supply the unchecked formulas; the `try_*` methods add the
/// `p > 0` domain check.
pub trait Utility: Send + Sync + fmt::Debug {
    fn utility(&self, c: f64) -> f64;
    /// `(u')^{-1}(p)`, the optimal consumption at costate `p`.
    fn marginal_inverse(&self, p: f64) -> f64;
    fn hamiltonian(&self, p: f64) -> f64 {
        let c = self.marginal_inverse(p);
        -p * c + self.utility(c)
    }
    fn h_p(&self, p: f64) -> f64 {
        -self.marginal_inverse(p)
    }
    fn h_pp(&self, p: f64) -> f64;

    fn try_marginal_inverse(&self, p: f64) -> Result<f64> {
        check_positive("(u')^-1", p)?;
        Ok(self.marginal_inverse(p))
    }
    fn try_hamiltonian(&self, p: f64) -> Result<f64> {
        check_positive("H", p)?;
        Ok(self.hamiltonian(p))
    }
    fn try_h_p(&self, p: f64) -> Result<f64> {
        check_positive("H_p", p)?;
        Ok(self.h_p(p))
    }
    fn try_h_pp(&self, p: f64) -> Result<f64> {
        check_positive("H_pp", p)?;
        Ok(self.h_pp(p))
    }
}

fn check_positive(what: &'static str, p: f64) -> Result<()> {
    if p > 0.0 && p.is_finite() {
        Ok(())
    } else {
        Err(SolverError::Domain { what, value: p })
    }
}

/// `u(c) = c^(1-gamma) / (1-gamma)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crra {
    gamma: f64,
}

impl Crra {
    pub fn new(gamma: f64) -> Result<Self> {
        if gamma > 0.0 && gamma != 1.0 && gamma.is_finite() {
            Ok(Crra { gamma })
        } else {
            Err(SolverError::Config(format!(
                "CRRA exponent must be > 0 and != 1, got {gamma}"
            )))
        }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

impl Utility for Crra {
    fn utility(&self, c: f64) -> f64 {
        c.powf(1.0 - self.gamma) / (1.0 - self.gamma)
    }

    fn marginal_inverse(&self, p: f64) -> f64 {
        p.powf(-1.0 / self.gamma)
    }

    fn hamiltonian(&self, p: f64) -> f64 {
        // -p c + c^(1-g)/(1-g) with c = p^(-1/g) collapses to g/(1-g) p^(1-1/g)
        self.gamma / (1.0 - self.gamma) * p.powf(1.0 - 1.0 / self.gamma)
    }

    fn h_pp(&self, p: f64) -> f64 {
        p.powf(-1.0 / self.gamma - 1.0) / self.gamma
    }
}

/// Income diffusion `sigma(z)` and drift `mu(z)`; both must vanish at the
/// income bounds.
pub trait IncomeProcess: Send + Sync + fmt::Debug {
    fn bounds(&self) -> (f64, f64);
    fn sigma(&self, z: f64) -> f64;
    fn mu(&self, z: f64) -> f64;

    /// `(sigma(z), mu(z))`, rejecting `z` outside the income bounds.
    fn coefficients(&self, z: f64) -> Result<(f64, f64)> {
        let (lo, hi) = self.bounds();
        if !(lo..=hi).contains(&z) {
            return Err(SolverError::Domain {
                what: "income coefficients",
                value: z,
            });
        }
        Ok((self.sigma(z), self.mu(z)))
    }
}

/// `sigma = sigma_bar (z-z_min)(z_max-z) / norm_s`,
/// `mu = kappa (z_mid-z)(z-z_min)(z_max-z) / norm_m`, both shapes scaled to a
/// maximum of one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolynomialIncome {
    z_min: f64,
    z_max: f64,
    sigma_bar: f64,
    kappa: f64,
}

impl PolynomialIncome {
    pub fn new(z_min: f64, z_max: f64, sigma_bar: f64, kappa: f64) -> Self {
        PolynomialIncome {
            z_min,
            z_max,
            sigma_bar,
            kappa,
        }
    }
}

impl IncomeProcess for PolynomialIncome {
    fn bounds(&self) -> (f64, f64) {
        (self.z_min, self.z_max)
    }

    fn sigma(&self, z: f64) -> f64 {
        let span = self.z_max - self.z_min;
        let norm = 0.25 * span * span;
        self.sigma_bar * (z - self.z_min) * (self.z_max - z) / norm
    }

    fn mu(&self, z: f64) -> f64 {
        let span = self.z_max - self.z_min;
        let mid = 0.5 * (self.z_min + self.z_max);
        // max of |u (span^2/4 - u^2)| is span^3 / (12 sqrt 3)
        let norm = span * span * span / (12.0 * 3f64.sqrt());
        self.kappa * (mid - z) * (z - self.z_min) * (self.z_max - z) / norm
    }
}

/// Quintic smoothstep `6s^5 - 15s^4 + 10s^3` clamped to `[0, 1]`.
fn smoothstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * s * (s * (6.0 * s - 15.0) + 10.0)
}

/// Wealth cutoff: 1 on `[-2A, 2A]`, 0 outside `[-3A, 3A]`, C² in between.
pub fn chi(a: f64, half_width: f64) -> f64 {
    let x = a.abs();
    if x <= 2.0 * half_width {
        1.0
    } else if x >= 3.0 * half_width {
        0.0
    } else {
        1.0 - smoothstep((x - 2.0 * half_width) / half_width)
    }
}

/// Floor for Hamiltonian arguments: identity above `W/2`, `W/4` below `W/4`.
///
/// The blend is `W/4 + (W/4) q(u)` with `q(u) = 6u^3 - 8u^4 + 3u^5`, matching
/// value, slope and curvature at both ends; `q' > 0` on `(0, 1]`.
pub fn psi(x: f64, w_floor: f64) -> f64 {
    let quarter = 0.25 * w_floor;
    if x >= 2.0 * quarter {
        x
    } else if x <= quarter {
        quarter
    } else {
        let u = (x - quarter) / quarter;
        quarter + quarter * u * u * u * (6.0 + u * (-8.0 + 3.0 * u))
    }
}

/// Floors derived from the data, plus the cutoff half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffSpec {
    pub half_width: f64,
    /// `W = min (y_T + w_inf)`.
    pub w_floor: f64,
    /// `K_data = int g_0 H_pp(y_T + w_inf) (y_T + w_inf)`.
    pub k_data: f64,
    /// `K_data / 2`.
    pub k_floor: f64,
}

impl CutoffSpec {
    pub fn new(half_width: f64, w_floor: f64, k_data: f64) -> Result<Self> {
        if !(w_floor > 0.0) {
            return Err(SolverError::DataRejected { w_floor });
        }
        if !(k_data > 0.0) {
            return Err(SolverError::Config(format!(
                "K_data must be > 0, got {k_data}"
            )));
        }
        Ok(CutoffSpec {
            half_width,
            w_floor,
            k_data,
            k_floor: 0.5 * k_data,
        })
    }

    /// `A2 = [-2A, 2A]` half-width.
    pub fn inner_limit(&self) -> f64 {
        2.0 * self.half_width
    }

    /// `A3 = [-3A, 3A]` half-width.
    pub fn outer_limit(&self) -> f64 {
        3.0 * self.half_width
    }

    pub fn psi(&self, x: f64) -> f64 {
        psi(x, self.w_floor)
    }

    pub fn chi(&self, a: f64) -> f64 {
        chi(a, self.half_width)
    }
}

/// Parameters together with the utility and income process in force.
#[derive(Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub utility: Arc<dyn Utility>,
    pub income: Arc<dyn IncomeProcess>,
}

impl fmt::Debug for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Model")
            .field("config", &self.config)
            .field("utility", &self.utility)
            .field("income", &self.income)
            .finish()
    }
}

impl Model {
    /// CRRA utility and the polynomial income family.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let utility = Arc::new(Crra::new(config.gamma)?);
        let income = Arc::new(PolynomialIncome::new(
            config.z_min,
            config.z_max,
            config.sigma_bar,
            config.kappa,
        ));
        Ok(Model {
            config,
            utility,
            income,
        })
    }

    pub fn with_utility(mut self, utility: Arc<dyn Utility>) -> Self {
        self.utility = utility;
        self
    }

    pub fn with_income(mut self, income: Arc<dyn IncomeProcess>) -> Self {
        self.income = income;
        self
    }

    /// `Theta_c(y, f) = H_p(psi(y + f w_inf))`.
    pub fn theta_c(&self, y: f64, f: f64, w_floor: f64) -> f64 {
        self.utility.h_p(psi(y + f * self.config.w_inf, w_floor))
    }

    /// Uncut `Theta(y, f) = H_p(y + f w_inf)`.
    pub fn theta(&self, y: f64, f: f64) -> Result<f64> {
        self.utility.try_h_p(y + f * self.config.w_inf)
    }
}

/// Computes `W` and `K_data` from the initial density and terminal `y`.
/// Rejects the data when `W <= 0`.
pub fn compute_floors(model: &Model, grid: &Grid2D, g0: &Field, y_t: &Field) -> Result<CutoffSpec> {
    grid.check(g0)?;
    grid.check(y_t)?;
    let w_inf = model.config.w_inf;
    let w_floor = y_t
        .values()
        .iter()
        .fold(f64::INFINITY, |m, &y| m.min(y + w_inf));
    if !(w_floor > 0.0) {
        return Err(SolverError::DataRejected { w_floor });
    }
    let integrand = Field::from_zip(g0, y_t, |g, y| {
        let p = y + w_inf;
        g * model.utility.h_pp(p) * p
    });
    let k_data = grid.integrate(&integrand);
    CutoffSpec::new(model.config.half_width, w_floor, k_data)
}
