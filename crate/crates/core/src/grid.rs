//! Uniform tensor grid on `D = [-3A, 3A] x [z_min, z_max]`, nodal fields,
//! trapezoid quadrature and the difference operators used by both PDEs.
//!
//! Conservative operators treat node `i` as the centre of a control volume of
//! width `h` (interior) or `h/2` (boundary nodes), which is exactly the
//! trapezoid weight. Interface fluxes on the two outer faces are zero, so the
//! quadrature-weighted sum of every conservative divergence telescopes to zero.

use std::io::{Read, Write};
use std::ops::{Add, Sub};

use ndarray::{Array2, Zip};

use crate::error::{Result, SolverError};

/// Below this magnitude a node counts as outside the support.
pub const SUPPORT_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    half_width: f64,
    z_min: f64,
    z_max: f64,
    n_a: usize,
    n_z: usize,
    h_a: f64,
    h_z: f64,
    a_nodes: Vec<f64>,
    z_nodes: Vec<f64>,
    w_a: Vec<f64>,
    w_z: Vec<f64>,
}

fn uniform_nodes(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let h = (hi - lo) / (n - 1) as f64;
    let mut nodes: Vec<f64> = (0..n).map(|k| lo + h * k as f64).collect();
    nodes[n - 1] = hi;
    nodes
}

fn trapezoid_weights(h: f64, n: usize) -> Vec<f64> {
    let mut w = vec![h; n];
    w[0] = 0.5 * h;
    w[n - 1] = 0.5 * h;
    w
}

impl Grid2D {
    pub const MIN_NODES: usize = 16;

    pub fn new(half_width: f64, z_min: f64, z_max: f64, n_a: usize, n_z: usize) -> Result<Self> {
        if n_a < Self::MIN_NODES || n_z < Self::MIN_NODES {
            return Err(SolverError::Config(format!(
                "grid needs at least {} nodes per axis, got {n_a} x {n_z}",
                Self::MIN_NODES
            )));
        }
        if !(half_width > 0.0) || !(z_max > z_min) || !half_width.is_finite() || !z_max.is_finite() || !z_min.is_finite() {
            return Err(SolverError::Config("degenerate grid extents".into()));
        }
        let h_a = 6.0 * half_width / (n_a - 1) as f64;
        let h_z = (z_max - z_min) / (n_z - 1) as f64;
        Ok(Grid2D {
            half_width,
            z_min,
            z_max,
            n_a,
            n_z,
            h_a,
            h_z,
            a_nodes: uniform_nodes(-3.0 * half_width, 3.0 * half_width, n_a),
            z_nodes: uniform_nodes(z_min, z_max, n_z),
            w_a: trapezoid_weights(h_a, n_a),
            w_z: trapezoid_weights(h_z, n_z),
        })
    }

    pub fn n_a(&self) -> usize {
        self.n_a
    }
    pub fn n_z(&self) -> usize {
        self.n_z
    }
    pub fn h_a(&self) -> f64 {
        self.h_a
    }
    pub fn h_z(&self) -> f64 {
        self.h_z
    }
    pub fn half_width(&self) -> f64 {
        self.half_width
    }
    pub fn z_bounds(&self) -> (f64, f64) {
        (self.z_min, self.z_max)
    }
    pub fn a_nodes(&self) -> &[f64] {
        &self.a_nodes
    }
    pub fn z_nodes(&self) -> &[f64] {
        &self.z_nodes
    }
    pub fn shape(&self) -> (usize, usize) {
        (self.n_a, self.n_z)
    }

    /// Trapezoid weight of node `(i, j)`.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.w_a[i] * self.w_z[j]
    }

    pub fn check(&self, field: &Field) -> Result<()> {
        if field.shape() == self.shape() {
            Ok(())
        } else {
            Err(SolverError::GridMismatch(format!(
                "field shape {:?} does not match grid {:?}",
                field.shape(),
                self.shape()
            )))
        }
    }

    /// Tensor-product trapezoid rule for the integral over `D`.
    pub fn integrate(&self, field: &Field) -> f64 {
        let mut total = 0.0;
        for (i, row) in field.0.outer_iter().enumerate() {
            let mut acc = 0.0;
            for (j, v) in row.iter().enumerate() {
                acc += self.w_z[j] * v;
            }
            total += self.w_a[i] * acc;
        }
        total
    }

    /// Integral of the pointwise product of two fields.
    pub fn integrate_product(&self, u: &Field, v: &Field) -> f64 {
        let mut total = 0.0;
        for i in 0..self.n_a {
            let mut acc = 0.0;
            for j in 0..self.n_z {
                acc += self.w_z[j] * u.0[[i, j]] * v.0[[i, j]];
            }
            total += self.w_a[i] * acc;
        }
        total
    }

    pub fn ddz(&self, u: &Field) -> Field {
        Field(first_difference(&u.0, Axis::Z, self.h_z))
    }

    pub fn d2dz2(&self, u: &Field) -> Field {
        Field(second_difference(&u.0, Axis::Z, self.h_z))
    }

    /// Central first difference in `a` with second-order one-sided ends.
    pub fn dda_central(&self, u: &Field) -> Field {
        Field(first_difference(&u.0, Axis::A, self.h_a))
    }

    pub fn d2da2(&self, u: &Field) -> Field {
        Field(second_difference(&u.0, Axis::A, self.h_a))
    }

    /// First-order upwind derivative in `a` for a quantity advected with
    /// velocity `speed`: backward difference where `speed >= 0`, forward where
    /// `speed < 0`, one-sided at the ends.
    pub fn dda_upwind(&self, u: &Field, speed: &Field) -> Field {
        let (n_a, n_z) = self.shape();
        let h = self.h_a;
        let mut out = Array2::zeros((n_a, n_z));
        for i in 0..n_a {
            for j in 0..n_z {
                let backward = if i == 0 {
                    false
                } else if i == n_a - 1 {
                    true
                } else {
                    speed.0[[i, j]] >= 0.0
                };
                out[[i, j]] = if backward {
                    (u.0[[i, j]] - u.0[[i - 1, j]]) / h
                } else {
                    (u.0[[i + 1, j]] - u.0[[i, j]]) / h
                };
            }
        }
        Field(out)
    }

    /// Conservative divergence `d/da (speed * density)` with upwind interface
    /// fluxes. Interface speeds are averages of the adjacent node speeds.
    pub fn conservative_divergence_a(&self, density: &Field, speed: &Field) -> Field {
        let (n_a, n_z) = self.shape();
        let mut out = Array2::zeros((n_a, n_z));
        for j in 0..n_z {
            let mut left = 0.0;
            for i in 0..n_a {
                let right = if i + 1 < n_a {
                    let s = 0.5 * (speed.0[[i, j]] + speed.0[[i + 1, j]]);
                    upwind_flux(s, density.0[[i, j]], density.0[[i + 1, j]])
                } else {
                    0.0
                };
                out[[i, j]] = (right - left) / self.w_a[i];
                left = right;
            }
        }
        Field(out)
    }

    /// Conservative divergence `d/dz (speed * density)`.
    ///
    /// With `diffusivity = Some(d)`, an interface uses the centred density
    /// average whenever `|s| h_z <= min(d_j, d_{j+1})` (the cell Peclet bound
    /// for a `d/2` diffusion operator) and upwinds otherwise; with `None` every
    /// interface upwinds.
    pub fn conservative_divergence_z(&self, density: &Field, speed: &Field, diffusivity: Option<&Field>) -> Field {
        let (n_a, n_z) = self.shape();
        let mut out = Array2::zeros((n_a, n_z));
        for i in 0..n_a {
            let mut left = 0.0;
            for j in 0..n_z {
                let right = if j + 1 < n_z {
                    let s = 0.5 * (speed.0[[i, j]] + speed.0[[i, j + 1]]);
                    let (g0, g1) = (density.0[[i, j]], density.0[[i, j + 1]]);
                    let central = diffusivity.is_some_and(|d| {
                        s.abs() * self.h_z <= d.0[[i, j]].min(d.0[[i, j + 1]])
                    });
                    if central {
                        s * 0.5 * (g0 + g1)
                    } else {
                        upwind_flux(s, g0, g1)
                    }
                } else {
                    0.0
                };
                out[[i, j]] = (right - left) / self.w_z[j];
                left = right;
            }
        }
        Field(out)
    }

    /// Conservative `d^2/dz^2 (coeff * density)` with interface flux
    /// `((c g)_{j+1} - (c g)_j) / h_z` and zero flux on the outer faces.
    pub fn conservative_diffusion_z(&self, density: &Field, coeff: &Field) -> Field {
        let (n_a, n_z) = self.shape();
        let mut out = Array2::zeros((n_a, n_z));
        for i in 0..n_a {
            let mut left = 0.0;
            for j in 0..n_z {
                let right = if j + 1 < n_z {
                    (coeff.0[[i, j + 1]] * density.0[[i, j + 1]] - coeff.0[[i, j]] * density.0[[i, j]]) / self.h_z
                } else {
                    0.0
                };
                out[[i, j]] = (right - left) / self.w_z[j];
                left = right;
            }
        }
        Field(out)
    }

    /// Smallest `l` such that every `a`-node whose column max of `|field|`
    /// exceeds [`SUPPORT_THRESHOLD`] lies in `[-l, l]`; zero for an empty support.
    pub fn support_extent(&self, field: &Field) -> f64 {
        let mut extent: f64 = 0.0;
        for (i, row) in field.0.outer_iter().enumerate() {
            if row.iter().any(|v| v.abs() > SUPPORT_THRESHOLD) {
                extent = extent.max(self.a_nodes[i].abs());
            }
        }
        extent
    }

    /// Writes `a,z,value` rows, `a` outer and `z` inner.
    pub fn write_csv<W: Write>(&self, field: &Field, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["a", "z", "value"])?;
        for i in 0..self.n_a {
            for j in 0..self.n_z {
                w.write_record(&[
                    format!("{:e}", self.a_nodes[i]),
                    format!("{:e}", self.z_nodes[j]),
                    format!("{:e}", field.0[[i, j]]),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a snapshot written by [`Grid2D::write_csv`]; node coordinates must
    /// match this grid to within `1e-9` relative.
    pub fn read_csv<R: Read>(&self, input: R) -> Result<Field> {
        let mut r = csv::Reader::from_reader(input);
        let headers = r.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["a", "z", "value"] {
            return Err(SolverError::Io(format!("unexpected snapshot header {headers:?}")));
        }
        let mut values = Array2::zeros(self.shape());
        let mut count = 0usize;
        let tol = 1e-9 * (self.half_width + self.z_max.abs() + self.z_min.abs());
        for rec in r.records() {
            let rec = rec?;
            if count >= self.n_a * self.n_z {
                return Err(SolverError::GridMismatch("snapshot has too many rows".into()));
            }
            let parse = |k: usize| -> Result<f64> {
                rec.get(k)
                    .ok_or_else(|| SolverError::Io("short snapshot row".into()))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| SolverError::Io(e.to_string()))
            };
            let (i, j) = (count / self.n_z, count % self.n_z);
            let (a, z, v) = (parse(0)?, parse(1)?, parse(2)?);
            if (a - self.a_nodes[i]).abs() > tol || (z - self.z_nodes[j]).abs() > tol {
                return Err(SolverError::GridMismatch(format!(
                    "snapshot row {count} at ({a}, {z}) does not match node ({}, {})",
                    self.a_nodes[i], self.z_nodes[j]
                )));
            }
            if !v.is_finite() {
                return Err(SolverError::Io(format!("non-finite value in snapshot row {count}")));
            }
            values[[i, j]] = v;
            count += 1;
        }
        if count != self.n_a * self.n_z {
            return Err(SolverError::GridMismatch(format!(
                "snapshot has {count} rows, grid has {}",
                self.n_a * self.n_z
            )));
        }
        Ok(Field(values))
    }
}

#[inline]
fn upwind_flux(speed: f64, left: f64, right: f64) -> f64 {
    if speed >= 0.0 {
        speed * left
    } else {
        speed * right
    }
}

#[derive(Clone, Copy)]
enum Axis {
    A,
    Z,
}

fn first_difference(u: &Array2<f64>, axis: Axis, h: f64) -> Array2<f64> {
    let (n_a, n_z) = u.dim();
    let mut out = Array2::zeros((n_a, n_z));
    let n = match axis {
        Axis::A => n_a,
        Axis::Z => n_z,
    };
    let at = |k: usize, other: usize| match axis {
        Axis::A => u[[k, other]],
        Axis::Z => u[[other, k]],
    };
    let others = match axis {
        Axis::A => n_z,
        Axis::Z => n_a,
    };
    for o in 0..others {
        for k in 0..n {
            let d = if k == 0 {
                (-3.0 * at(0, o) + 4.0 * at(1, o) - at(2, o)) / (2.0 * h)
            } else if k == n - 1 {
                (3.0 * at(n - 1, o) - 4.0 * at(n - 2, o) + at(n - 3, o)) / (2.0 * h)
            } else {
                (at(k + 1, o) - at(k - 1, o)) / (2.0 * h)
            };
            match axis {
                Axis::A => out[[k, o]] = d,
                Axis::Z => out[[o, k]] = d,
            }
        }
    }
    out
}

fn second_difference(u: &Array2<f64>, axis: Axis, h: f64) -> Array2<f64> {
    let (n_a, n_z) = u.dim();
    let mut out = Array2::zeros((n_a, n_z));
    let n = match axis {
        Axis::A => n_a,
        Axis::Z => n_z,
    };
    let at = |k: usize, other: usize| match axis {
        Axis::A => u[[k, other]],
        Axis::Z => u[[other, k]],
    };
    let others = match axis {
        Axis::A => n_z,
        Axis::Z => n_a,
    };
    let h2 = h * h;
    for o in 0..others {
        for k in 0..n {
            let d = if k == 0 {
                (2.0 * at(0, o) - 5.0 * at(1, o) + 4.0 * at(2, o) - at(3, o)) / h2
            } else if k == n - 1 {
                (2.0 * at(n - 1, o) - 5.0 * at(n - 2, o) + 4.0 * at(n - 3, o) - at(n - 4, o)) / h2
            } else {
                (at(k + 1, o) - 2.0 * at(k, o) + at(k - 1, o)) / h2
            };
            match axis {
                Axis::A => out[[k, o]] = d,
                Axis::Z => out[[o, k]] = d,
            }
        }
    }
    out
}

/// Real values sampled at the nodes of a [`Grid2D`], indexed `[i_a, i_z]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Field(Array2<f64>);

impl Field {
    pub fn zeros(grid: &Grid2D) -> Self {
        Field(Array2::zeros(grid.shape()))
    }

    pub fn constant(grid: &Grid2D, value: f64) -> Self {
        Field(Array2::from_elem(grid.shape(), value))
    }

    pub fn from_fn(grid: &Grid2D, f: impl Fn(f64, f64) -> f64) -> Self {
        let (a, z) = (grid.a_nodes(), grid.z_nodes());
        Field(Array2::from_shape_fn(grid.shape(), |(i, j)| f(a[i], z[j])))
    }

    pub fn from_array(values: Array2<f64>) -> Self {
        Field(values)
    }

    pub fn from_zip(u: &Field, v: &Field, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut out = Array2::zeros(u.0.dim());
        Zip::from(&mut out)
            .and(&u.0)
            .and(&v.0)
            .for_each(|o, &x, &y| *o = f(x, y));
        Field(out)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut Array2<f64> {
        &mut self.0
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[[i, j]]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field(self.0.mapv(f))
    }

    pub fn scaled(&self, s: f64) -> Field {
        Field(&self.0 * s)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Index of the smallest value.
    pub fn argmin(&self) -> (usize, usize) {
        let mut best = (0, 0);
        let mut val = f64::INFINITY;
        for ((i, j), &v) in self.0.indexed_iter() {
            if v < val {
                val = v;
                best = (i, j);
            }
        }
        best
    }
}

impl Add for &Field {
    type Output = Field;
    fn add(self, rhs: &Field) -> Field {
        Field(&self.0 + &rhs.0)
    }
}

impl Sub for &Field {
    type Output = Field;
    fn sub(self, rhs: &Field) -> Field {
        Field(&self.0 - &rhs.0)
    }
}
