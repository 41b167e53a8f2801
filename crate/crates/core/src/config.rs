//! Run configuration: a flat TOML table of model parameters, grid sizes, solver
//! knobs, initial/terminal data and output settings. Every key has a default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::coupling::PicardOptions;
use crate::dynamics::Discretization;
use crate::error::{Result, SolverError};
use crate::grid::{Field, Grid2D};
use crate::model::{Model, ModelConfig};
use crate::oracle::OracleOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub rho: f64,
    pub w_inf: f64,
    pub gamma: f64,
    pub horizon: f64,
    pub half_width: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub sigma_bar: f64,
    pub kappa: f64,

    pub n_a: usize,
    pub n_z: usize,
    /// Number of time steps; 0 picks one from the stability bound.
    pub n_t: usize,
    pub cfl_safety: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub initial_rate: f64,

    pub g0_a_center: f64,
    pub g0_a_width: f64,
    /// Half-width of the smooth window that cuts `g_0` off in `a`.
    pub g0_a_radius: f64,
    pub g0_z_center: f64,
    pub g0_z_width: f64,
    pub normalize_g0: bool,
    /// `a,z,value` CSV on the solver grid; overrides the analytic `g_0`.
    pub g0_file: Option<PathBuf>,

    /// `"zero"` or `"bump"`.
    pub yt_kind: String,
    pub yt_amplitude: f64,
    pub yt_a_center: f64,
    pub yt_a_radius: f64,
    /// Linear tilt in `z` about the midpoint of the income range.
    pub yt_z_tilt: f64,
    pub yt_file: Option<PathBuf>,

    pub out_dir: PathBuf,
    pub seed: u64,
    pub particles: usize,
    pub stride: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        RunConfig {
            rho: m.rho,
            w_inf: m.w_inf,
            gamma: m.gamma,
            horizon: m.horizon,
            half_width: m.half_width,
            z_min: m.z_min,
            z_max: m.z_max,
            sigma_bar: m.sigma_bar,
            kappa: m.kappa,
            n_a: 64,
            n_z: 32,
            n_t: 0,
            cfl_safety: 0.1,
            tol: 1e-8,
            max_iters: 200,
            initial_rate: 0.0,
            g0_a_center: 0.0,
            g0_a_width: 0.4,
            g0_a_radius: 0.6,
            g0_z_center: 1.0,
            g0_z_width: 0.2,
            normalize_g0: true,
            g0_file: None,
            yt_kind: "zero".into(),
            yt_amplitude: 0.0,
            yt_a_center: 0.0,
            yt_a_radius: 0.8,
            yt_z_tilt: 0.0,
            yt_file: None,
            out_dir: PathBuf::from("out"),
            seed: 0,
            particles: 100_000,
            stride: 10,
        }
    }
}

/// Smooth compactly supported window with unit peak: `exp(1 - 1/(1 - s^2))`.
pub fn window(s: f64) -> f64 {
    if s.abs() < 1.0 {
        (1.0 - 1.0 / (1.0 - s * s)).exp()
    } else {
        0.0
    }
}

/// Discretization plus the data it is run on.
#[derive(Debug, Clone)]
pub struct Problem {
    pub disc: Discretization,
    pub g0: Field,
    pub y_t: Field,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| SolverError::Config(e.to_string()))
    }

    /// Reads a config file. Relative data-file paths are resolved against the
    /// directory of the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SolverError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.g0_file, &mut cfg.yt_file].into_iter().flatten() {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Built-in parameter sets: `consistency`, `generic`, `nonexistence`.
    pub fn preset(name: &str) -> Option<RunConfig> {
        let base = RunConfig::default();
        match name {
            "consistency" => Some(base),
            "generic" => Some(RunConfig {
                sigma_bar: 0.3,
                kappa: 0.05,
                yt_kind: "bump".into(),
                yt_amplitude: 0.2,
                yt_z_tilt: 0.5,
                g0_a_center: 0.1,
                ..base
            }),
            "nonexistence" => Some(RunConfig {
                z_min: 0.5,
                z_max: 2.5,
                g0_z_center: 1.5,
                g0_z_width: 0.3,
                horizon: 0.2,
                n_a: 256,
                n_z: 32,
                ..base
            }),
            _ => None,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            rho: self.rho,
            w_inf: self.w_inf,
            gamma: self.gamma,
            horizon: self.horizon,
            half_width: self.half_width,
            z_min: self.z_min,
            z_max: self.z_max,
            sigma_bar: self.sigma_bar,
            kappa: self.kappa,
        }
    }

    pub fn picard_options(&self) -> PicardOptions {
        PicardOptions {
            tol: self.tol,
            max_iters: self.max_iters,
            cfl_safety: self.cfl_safety,
            n_t: (self.n_t > 0).then_some(self.n_t),
            initial_rate: self.initial_rate,
        }
    }

    pub fn oracle_options(&self) -> OracleOptions {
        OracleOptions {
            particles: self.particles,
            seed: self.seed,
            stride: self.stride,
        }
    }

    pub fn discretization(&self) -> Result<Discretization> {
        let model = Model::new(self.model_config())?;
        Discretization::new(model, self.n_a, self.n_z)
    }

    pub fn initial_density(&self, grid: &Grid2D) -> Result<Field> {
        let g0 = match &self.g0_file {
            Some(p) => read_field(grid, p)?,
            None => {
                if !(self.g0_a_width > 0.0 && self.g0_a_radius > 0.0 && self.g0_z_width > 0.0) {
                    return Err(SolverError::Config("g0 widths and radius must be > 0".into()));
                }
                Field::from_fn(grid, |a, z| {
                    let s = (a - self.g0_a_center) / self.g0_a_width;
                    let t = (z - self.g0_z_center) / self.g0_z_width;
                    (-s * s).exp() * window((a - self.g0_a_center) / self.g0_a_radius) * (-t * t).exp()
                })
            }
        };
        if g0.min() < 0.0 || !g0.is_finite() {
            return Err(SolverError::Config("g0 must be finite and nonnegative".into()));
        }
        let mass = grid.integrate(&g0);
        if !(mass > 0.0) {
            return Err(SolverError::Config("g0 has zero mass on the grid".into()));
        }
        Ok(if self.normalize_g0 { g0.scaled(1.0 / mass) } else { g0 })
    }

    pub fn terminal_value(&self, grid: &Grid2D) -> Result<Field> {
        if let Some(p) = &self.yt_file {
            return read_field(grid, p);
        }
        let z_mid = 0.5 * (self.z_min + self.z_max);
        match self.yt_kind.as_str() {
            "zero" => Ok(Field::zeros(grid)),
            "bump" => {
                if !(self.yt_a_radius > 0.0) {
                    return Err(SolverError::Config("yt_a_radius must be > 0".into()));
                }
                Ok(Field::from_fn(grid, |a, z| {
                    self.yt_amplitude
                        * window((a - self.yt_a_center) / self.yt_a_radius)
                        * (1.0 + self.yt_z_tilt * (z - z_mid))
                }))
            }
            other => Err(SolverError::Config(format!("unknown yt_kind {other:?} (expected \"zero\" or \"bump\")"))),
        }
    }

    /// Builds the discretization and data; both `g_0` and `y_T` must have
    /// their `a`-support in `[-A, A]`.
    pub fn build(&self) -> Result<Problem> {
        let disc = self.discretization()?;
        let g0 = self.initial_density(&disc.grid)?;
        let y_t = self.terminal_value(&disc.grid)?;
        for (name, field) in [("g0", &g0), ("y_T", &y_t)] {
            let extent = disc.grid.support_extent(field);
            if extent > self.half_width + 1e-12 {
                return Err(SolverError::Config(format!(
                    "{name} has a-support up to {extent}, outside [-{0}, {0}]",
                    self.half_width
                )));
            }
        }
        Ok(Problem { disc, g0, y_t })
    }
}

fn read_field(grid: &Grid2D, path: &Path) -> Result<Field> {
    let file = std::fs::File::open(path).map_err(|e| SolverError::Io(format!("{}: {e}", path.display())))?;
    grid.read_csv(std::io::BufReader::new(file))
}
