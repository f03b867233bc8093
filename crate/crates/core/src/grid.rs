//! Periodic uniform lattices on the unit torus and the discrete operators
//! built on them.
//!
//! Nodes are stored with axis 0 varying fastest: node `(i0, i1)` lives at
//! flat index `i0 + n * i1`. All index arithmetic wraps modulo `n` per axis.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point of the torus. In 1D only the first coordinate is meaningful.
pub type Point = [f64; 2];

/// Uniform periodic lattice on `T^dim`, `dim` in {1, 2}, with spacing `1/n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodicGrid {
    dim: usize,
    n: usize,
}

impl PeriodicGrid {
    pub const MIN_NODES: usize = 8;

    pub fn new(dim: usize, n_per_axis: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::InvalidGrid(format!("dim must be 1 or 2, got {dim}")));
        }
        if n_per_axis < Self::MIN_NODES {
            return Err(Error::InvalidGrid(format!(
                "n_per_axis must be at least {}, got {n_per_axis}",
                Self::MIN_NODES
            )));
        }
        Ok(Self { dim, n: n_per_axis })
    }

    pub fn one_d(n: usize) -> Result<Self> {
        Self::new(1, n)
    }

    pub fn two_d(n: usize) -> Result<Self> {
        Self::new(2, n)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_per_axis(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// `h^dim`, the quadrature weight of one node.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn coords(&self, idx: usize) -> [usize; 2] {
        if self.dim == 1 {
            [idx, 0]
        } else {
            [idx % self.n, idx / self.n]
        }
    }

    pub fn index(&self, coords: [usize; 2]) -> usize {
        if self.dim == 1 {
            coords[0] % self.n
        } else {
            coords[0] % self.n + self.n * (coords[1] % self.n)
        }
    }

    /// Neighbour of `idx` displaced by `offset` nodes along `axis`, wrapping.
    #[inline]
    pub fn shift(&self, idx: usize, axis: usize, offset: isize) -> usize {
        let mut c = self.coords(idx);
        let n = self.n as isize;
        c[axis] = (c[axis] as isize + offset).rem_euclid(n) as usize;
        self.index(c)
    }

    pub fn point(&self, idx: usize) -> Point {
        let c = self.coords(idx);
        let h = self.spacing();
        if self.dim == 1 {
            [c[0] as f64 * h, 0.0]
        } else {
            [c[0] as f64 * h, c[1] as f64 * h]
        }
    }

    /// Index of the node nearest to `x` (coordinates taken modulo 1).
    pub fn nearest_node(&self, x: &[f64]) -> usize {
        let mut c = [0usize; 2];
        for (axis, slot) in c.iter_mut().enumerate().take(self.dim) {
            let t = x[axis].rem_euclid(1.0) * self.n as f64;
            *slot = (t.round() as usize) % self.n;
        }
        self.index(c)
    }

    fn check_axis(&self, axis: usize) -> Result<()> {
        if axis >= self.dim {
            Err(Error::AxisOutOfRange { axis, dim: self.dim })
        } else {
            Ok(())
        }
    }
}

/// Periodic distance between two scalars on the unit circle.
pub fn circle_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

/// Euclidean distance on the flat torus.
pub fn torus_distance(dim: usize, a: &[f64], b: &[f64]) -> f64 {
    (0..dim)
        .map(|k| circle_distance(a[k], b[k]).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// A real-valued function sampled at every node of a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    grid: PeriodicGrid,
    values: Vec<f64>,
}

impl GridField {
    pub fn zeros(grid: PeriodicGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: PeriodicGrid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    pub fn from_fn(grid: PeriodicGrid, mut f: impl FnMut(Point) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.point(i))).collect();
        Self { grid, values }
    }

    pub fn from_values(grid: PeriodicGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::IncompatibleGrid(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "values",
                detail: format!("non-finite entry at node {i}"),
            });
        }
        Ok(Self { grid, values })
    }

    pub(crate) fn from_raw(grid: PeriodicGrid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check_compatible(&self, other: &GridField) -> Result<()> {
        if self.grid != other.grid {
            Err(Error::IncompatibleGrid(format!(
                "{:?} vs {:?}",
                self.grid, other.grid
            )))
        } else {
            Ok(())
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridField {
        GridField::from_raw(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_with(&self, other: &GridField, f: impl Fn(f64, f64) -> f64) -> Result<GridField> {
        self.check_compatible(other)?;
        Ok(GridField::from_raw(
            self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn add(&self, other: &GridField) -> Result<GridField> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &GridField) -> Result<GridField> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> GridField {
        self.map(|v| v * s)
    }

    pub fn offset(&self, c: f64) -> GridField {
        self.map(|v| v + c)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        integrate(self)
    }

    /// `‖self - other‖∞`.
    pub fn sup_distance(&self, other: &GridField) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    /// Cyclic shift by `k` nodes along `axis`: `out[i] = self[i - k]`.
    pub fn shifted(&self, axis: usize, k: isize) -> Result<GridField> {
        self.grid.check_axis(axis)?;
        let g = self.grid;
        Ok(GridField::from_raw(
            g,
            (0..g.len()).map(|i| self.values[g.shift(i, axis, -k)]).collect(),
        ))
    }

    /// Periodic (bi)linear interpolation at an arbitrary point of the torus.
    pub fn interpolate(&self, x: &[f64]) -> f64 {
        let g = self.grid;
        let n = g.n_per_axis();
        let locate = |t: f64| {
            let s = t.rem_euclid(1.0) * n as f64;
            let i = (s.floor() as usize).min(n - 1);
            (i, s - i as f64)
        };
        if g.dim() == 1 {
            let (i, t) = locate(x[0]);
            let a = self.values[i];
            let b = self.values[(i + 1) % n];
            a + t * (b - a)
        } else {
            let (i, s) = locate(x[0]);
            let (j, t) = locate(x[1]);
            let at = |a: usize, b: usize| self.values[g.index([a % n, b % n])];
            let v00 = at(i, j);
            let v10 = at(i + 1, j);
            let v01 = at(i, j + 1);
            let v11 = at(i + 1, j + 1);
            (1.0 - s) * (1.0 - t) * v00 + s * (1.0 - t) * v10 + (1.0 - s) * t * v01 + s * t * v11
        }
    }
}

impl std::ops::Index<usize> for GridField {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

/// One-sided differences `(D⁻u, D⁺u)` along `axis`.
pub fn forward_backward_differences(u: &GridField, axis: usize) -> Result<(GridField, GridField)> {
    let g = *u.grid();
    g.check_axis(axis)?;
    let inv_h = g.n_per_axis() as f64;
    let v = u.values();
    let mut minus = Vec::with_capacity(g.len());
    let mut plus = Vec::with_capacity(g.len());
    for i in 0..g.len() {
        let left = v[g.shift(i, axis, -1)];
        let right = v[g.shift(i, axis, 1)];
        minus.push((v[i] - left) * inv_h);
        plus.push((right - v[i]) * inv_h);
    }
    Ok((GridField::from_raw(g, minus), GridField::from_raw(g, plus)))
}

/// Three-point second difference on a stencil with spacing `h`.
#[inline]
pub fn second_difference_stencil(left: f64, centre: f64, right: f64, h: f64) -> f64 {
    (right - 2.0 * centre + left) / (h * h)
}

/// `(u_{i+1} - 2u_i + u_{i-1}) / h²` along `axis`.
pub fn second_difference(u: &GridField, axis: usize) -> Result<GridField> {
    let g = *u.grid();
    g.check_axis(axis)?;
    let h = g.spacing();
    let v = u.values();
    Ok(GridField::from_raw(
        g,
        (0..g.len())
            .map(|i| {
                second_difference_stencil(v[g.shift(i, axis, -1)], v[i], v[g.shift(i, axis, 1)], h)
            })
            .collect(),
    ))
}

/// `Σ_axis a_axis(x) · D²_axis u` for a diagonal, nonnegative diffusion.
pub fn diffusion_term(u: &GridField, a: &[GridField]) -> Result<GridField> {
    let g = *u.grid();
    if a.len() != g.dim() {
        return Err(Error::IncompatibleGrid(format!(
            "expected {} diffusion fields, got {}",
            g.dim(),
            a.len()
        )));
    }
    let mut out = vec![0.0; g.len()];
    for (axis, coeff) in a.iter().enumerate() {
        u.check_compatible(coeff)?;
        if let Some((node, &value)) = coeff.values().iter().enumerate().find(|(_, v)| **v < 0.0) {
            return Err(Error::NegativeDiffusion { axis, node, value });
        }
        let d2 = second_difference(u, axis)?;
        for ((o, &c), &d) in out.iter_mut().zip(coeff.values()).zip(d2.values()) {
            *o += c * d;
        }
    }
    Ok(GridField::from_raw(g, out))
}

/// Periodic midpoint quadrature `h^dim Σ u_i`.
pub fn integrate(u: &GridField) -> f64 {
    u.grid().cell_volume() * u.values().iter().sum::<f64>()
}

/// Largest one-sided slope `max |D⁺u|` over nodes and axes.
pub fn discrete_lipschitz(u: &GridField) -> f64 {
    let g = *u.grid();
    let inv_h = g.n_per_axis() as f64;
    let v = u.values();
    let mut lip: f64 = 0.0;
    for axis in 0..g.dim() {
        for i in 0..g.len() {
            lip = lip.max(((v[g.shift(i, axis, 1)] - v[i]) * inv_h).abs());
        }
    }
    lip
}

/// A smooth periodic test function sampled with its analytic derivatives.
#[derive(Clone, Debug)]
pub struct TestFunction {
    pub label: String,
    pub phi: GridField,
    /// `∂φ/∂x_axis`, one field per axis.
    pub gradient: Vec<GridField>,
    /// `∂²φ/∂x_axis²`, one field per axis.
    pub hessian_diag: Vec<GridField>,
}

#[derive(Clone, Copy)]
enum Wave {
    Sin,
    Cos,
}

impl Wave {
    /// Value and first two derivatives of the wave of frequency `k` at `t`.
    fn eval(self, k: usize, t: f64) -> (f64, f64, f64) {
        let w = 2.0 * PI * k as f64;
        let (s, c) = (w * t).sin_cos();
        match self {
            Wave::Sin => (s, w * c, -w * w * s),
            Wave::Cos => (c, -w * s, -w * w * c),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Wave::Sin => "sin",
            Wave::Cos => "cos",
        }
    }
}

/// Sine and cosine modes `1..=max_mode` per axis (and their products in 2D)
/// with analytically sampled derivatives. Each `φ` has sup-norm 1 on the torus.
pub fn fourier_test_functions(grid: &PeriodicGrid, max_mode: usize) -> Result<Vec<TestFunction>> {
    let limit = grid.n_per_axis() / 2;
    if max_mode == 0 || max_mode >= limit {
        return Err(Error::Aliasing { max_mode, limit });
    }
    let g = *grid;
    let mut out = Vec::new();
    let waves = [Wave::Sin, Wave::Cos];

    for axis in 0..g.dim() {
        for k in 1..=max_mode {
            for wave in waves {
                let mut phi = Vec::with_capacity(g.len());
                let mut grad = vec![vec![0.0; g.len()]; g.dim()];
                let mut hess = vec![vec![0.0; g.len()]; g.dim()];
                for i in 0..g.len() {
                    let x = g.point(i);
                    let (v, d, dd) = wave.eval(k, x[axis]);
                    phi.push(v);
                    grad[axis][i] = d;
                    hess[axis][i] = dd;
                }
                out.push(TestFunction {
                    label: format!("{}({}·2πx{})", wave.name(), k, axis),
                    phi: GridField::from_raw(g, phi),
                    gradient: grad.into_iter().map(|v| GridField::from_raw(g, v)).collect(),
                    hessian_diag: hess.into_iter().map(|v| GridField::from_raw(g, v)).collect(),
                });
            }
        }
    }

    if g.dim() == 2 {
        for kx in 1..=max_mode {
            for ky in 1..=max_mode {
                for wx in waves {
                    for wy in waves {
                        let mut phi = Vec::with_capacity(g.len());
                        let mut grad = [vec![0.0; g.len()], vec![0.0; g.len()]];
                        let mut hess = [vec![0.0; g.len()], vec![0.0; g.len()]];
                        for i in 0..g.len() {
                            let x = g.point(i);
                            let (a, da, dda) = wx.eval(kx, x[0]);
                            let (b, db, ddb) = wy.eval(ky, x[1]);
                            phi.push(a * b);
                            grad[0][i] = da * b;
                            grad[1][i] = a * db;
                            hess[0][i] = dda * b;
                            hess[1][i] = a * ddb;
                        }
                        out.push(TestFunction {
                            label: format!("{}({kx}·2πx0)·{}({ky}·2πx1)", wx.name(), wy.name()),
                            phi: GridField::from_raw(g, phi),
                            gradient: grad.into_iter().map(|v| GridField::from_raw(g, v)).collect(),
                            hessian_diag: hess
                                .into_iter()
                                .map(|v| GridField::from_raw(g, v))
                                .collect(),
                        });
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid1(n: usize) -> PeriodicGrid {
        PeriodicGrid::one_d(n).unwrap()
    }

    #[test]
    fn grid_invariants() {
        for n in [8, 64, 1024] {
            let g = grid1(n);
            assert_eq!(g.spacing() * n as f64, 1.0);
            assert_eq!(g.len(), n);
            assert_eq!(g.shift(0, 0, -1), n - 1);
            assert_eq!(g.shift(n - 1, 0, 1), 0);
        }
        let g2 = PeriodicGrid::two_d(16).unwrap();
        assert_eq!(g2.len(), 256);
        assert_eq!(g2.shift(g2.index([3, 0]), 1, -1), g2.index([3, 15]));
        assert!(PeriodicGrid::new(3, 16).is_err());
        assert!(PeriodicGrid::new(1, 4).is_err());
    }

    #[test]
    fn differences_of_constant_vanish() {
        let g = grid1(32);
        let u = GridField::constant(g, 5.0);
        let (m, p) = forward_backward_differences(&u, 0).unwrap();
        assert!(m.values().iter().chain(p.values()).all(|&v| v == 0.0));
        assert!(second_difference(&u, 0).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sawtooth_forward_difference_wraps() {
        let n = 16;
        let g = grid1(n);
        let u = GridField::from_fn(g, |x| x[0]);
        let (_, plus) = forward_backward_differences(&u, 0).unwrap();
        for i in 0..n - 1 {
            assert!((plus[i] - 1.0).abs() < 1e-12);
        }
        assert!((plus[n - 1] - (1.0 - n as f64)).abs() < 1e-12);
    }

    #[test]
    fn forward_difference_of_sine() {
        let g = grid1(256);
        let u = GridField::from_fn(g, |x| (2.0 * PI * x[0]).sin());
        let (_, plus) = forward_backward_differences(&u, 0).unwrap();
        let err = (0..g.len())
            .map(|i| (plus[i] - 2.0 * PI * (2.0 * PI * g.point(i)[0]).cos()).abs())
            .fold(0.0, f64::max);
        assert!(err <= 0.1, "err = {err}");
    }

    #[test]
    fn second_difference_of_cosine() {
        let g = grid1(256);
        let u = GridField::from_fn(g, |x| (2.0 * PI * x[0]).cos());
        let d2 = second_difference(&u, 0).unwrap();
        let err = (0..g.len())
            .map(|i| (d2[i] + 4.0 * PI * PI * (2.0 * PI * g.point(i)[0]).cos()).abs())
            .fold(0.0, f64::max);
        assert!(err <= 0.05, "err = {err}");
    }

    #[test]
    fn second_difference_exact_on_quadratic_stencil() {
        assert_eq!(second_difference_stencil(0.0, 1.0, 4.0, 1.0), 2.0);
    }

    #[test]
    fn diffusion_term_cases() {
        let g = grid1(256);
        let u = GridField::from_fn(g, |x| (2.0 * PI * x[0]).cos());
        let zero = diffusion_term(&u, &[GridField::zeros(g)]).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));

        let unit = diffusion_term(&u, &[GridField::constant(g, 1.0)]).unwrap();
        assert_eq!(unit, second_difference(&u, 0).unwrap());

        let a = GridField::from_fn(g, |x| (PI * x[0]).sin().powi(2));
        let out = diffusion_term(&u, &[a]).unwrap();
        let err = (0..g.len())
            .map(|i| {
                let x = g.point(i)[0];
                let exact = -4.0 * PI * PI * (PI * x).sin().powi(2) * (2.0 * PI * x).cos();
                (out[i] - exact).abs()
            })
            .fold(0.0, f64::max);
        assert!(err <= 0.05, "err = {err}");

        let neg = GridField::constant(g, -0.1);
        assert!(matches!(
            diffusion_term(&u, &[neg]),
            Err(Error::NegativeDiffusion { .. })
        ));
    }

    #[test]
    fn quadrature_identities() {
        for n in [8, 16, 100, 256] {
            let g = grid1(n);
            assert!((integrate(&GridField::constant(g, 1.0)) - 1.0).abs() < 1e-12);
            let s = GridField::from_fn(g, |x| (2.0 * PI * x[0]).sin());
            assert!(integrate(&s).abs() < 1e-12);
            let s2 = GridField::from_fn(g, |x| (2.0 * PI * x[0]).sin().powi(2));
            assert!((integrate(&s2) - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn fourier_family_counts_and_values() {
        let g = grid1(64);
        let fams = fourier_test_functions(&g, 1).unwrap();
        assert_eq!(fams.len(), 2);
        let x = g.point(5)[0];
        let s = &fams[0];
        assert!((s.phi[5] - (2.0 * PI * x).sin()).abs() < 1e-15);
        assert!((s.gradient[0][5] - 2.0 * PI * (2.0 * PI * x).cos()).abs() < 1e-12);
        assert!((s.hessian_diag[0][5] + 4.0 * PI * PI * (2.0 * PI * x).sin()).abs() < 1e-12);
        for m in 1..5 {
            assert_eq!(fourier_test_functions(&g, m).unwrap().len(), 2 * m);
        }
        assert!(matches!(
            fourier_test_functions(&g, 32),
            Err(Error::Aliasing { .. })
        ));
        let g2 = PeriodicGrid::two_d(16).unwrap();
        assert_eq!(fourier_test_functions(&g2, 2).unwrap().len(), 2 * 2 * 2 + 4 * 4);
    }

    #[test]
    fn fourier_derivatives_match_centered_differences() {
        let g = grid1(256);
        let h = g.spacing();
        for tf in fourier_test_functions(&g, 4).unwrap() {
            let (m, p) = forward_backward_differences(&tf.phi, 0).unwrap();
            // mode index is encoded in the label; recover it for the bound
            let k: f64 = tf.label[4..5].parse().unwrap();
            let bound = 4.0 * PI * PI * h * k * k;
            for i in 0..g.len() {
                let centred = 0.5 * (m[i] + p[i]);
                assert!((centred - tf.gradient[0][i]).abs() <= bound);
            }
        }
    }

    #[test]
    fn lipschitz_examples() {
        let g = grid1(64);
        assert_eq!(discrete_lipschitz(&GridField::constant(g, 3.0)), 0.0);
        let saw = GridField::from_fn(g, |x| x[0].min(1.0 - x[0]));
        assert!((discrete_lipschitz(&saw) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn interpolation_reproduces_nodes_and_midpoints() {
        let g = grid1(16);
        let u = GridField::from_fn(g, |x| (2.0 * PI * x[0]).sin());
        for i in 0..16 {
            assert!((u.interpolate(&[g.point(i)[0]]) - u[i]).abs() < 1e-14);
        }
        let mid = u.interpolate(&[(15.5) / 16.0]);
        assert!((mid - 0.5 * (u[15] + u[0])).abs() < 1e-14);

        let g2 = PeriodicGrid::two_d(8).unwrap();
        let v = GridField::from_fn(g2, |x| x[0] + 2.0 * x[1]);
        let y = v.interpolate(&[0.3125, 0.1875]);
        assert!((y - (0.3125 + 2.0 * 0.1875)).abs() < 1e-14);
    }
}
