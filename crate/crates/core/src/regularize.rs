//! Sup/inf convolutions, Lasry-Lions regularization and mollification.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{diffusion_term, second_difference, GridField, PeriodicGrid};
use crate::models::audit_grid;
use crate::solver::ProblemSpec;

/// Lower envelope `d[p] = min_q s(p−q)² + f[q]` for `p` in `queries`.
/// Returns the value and the minimizing `q` for each query.
fn lower_envelope(f: &[f64], s: f64, queries: std::ops::Range<usize>) -> Vec<(f64, usize)> {
    let m = f.len();
    let key = |q: usize| f[q] + s * (q * q) as f64;
    let cross = |q: usize, r: usize| (key(q) - key(r)) / (2.0 * s * (q - r) as f64);
    let mut v = vec![0usize; m];
    let mut z = vec![0.0f64; m + 1];
    let mut k = 0usize;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..m {
        let mut sx = cross(q, v[k]);
        while sx <= z[k] {
            k -= 1;
            sx = cross(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = sx;
        z[k + 1] = f64::INFINITY;
    }
    let hull = k;
    let mut out = Vec::with_capacity(queries.len());
    let mut k = 0usize;
    for p in queries {
        while z[k + 1] < p as f64 {
            k += 1;
        }
        // Neighbouring parabolas can tie up to rounding; take the exact minimum.
        let mut best = (f64::INFINITY, 0usize);
        for &q in &v[k.saturating_sub(1)..=(k + 1).min(hull)] {
            let val = s * (p as f64 - q as f64).powi(2) + f[q];
            if val < best.0 {
                best = (val, q);
            }
        }
        out.push(best);
    }
    out
}

/// `min_y f(y) + |x−y|²/(2ε)` along one axis, in place.
fn inf_pass(values: &mut [f64], grid: &PeriodicGrid, axis: usize, eps: f64) -> Result<()> {
    let n = grid.n_per_axis();
    let h = grid.spacing();
    let s = h * h / (2.0 * eps);
    let lines: Vec<Vec<usize>> = line_indices(grid, axis);
    let results: Vec<Result<Vec<f64>>> = lines
        .par_iter()
        .map(|line| {
            let f: Vec<f64> = (0..3 * n).map(|q| values[line[q % n]]).collect();
            let env = lower_envelope(&f, s, n..2 * n);
            let mut out = Vec::with_capacity(n);
            for (i, (val, q)) in env.into_iter().enumerate() {
                if (q as isize - (n + i) as isize).unsigned_abs() > n {
                    return Err(Error::PeriodInsufficiency(eps));
                }
                out.push(val);
            }
            Ok(out)
        })
        .collect();
    for (line, res) in lines.iter().zip(results) {
        for (idx, val) in line.iter().zip(res?) {
            values[*idx] = val;
        }
    }
    Ok(())
}

fn line_indices(grid: &PeriodicGrid, axis: usize) -> Vec<Vec<usize>> {
    let n = grid.n_per_axis();
    if grid.dim() == 1 {
        return vec![(0..n).collect()];
    }
    (0..n)
        .map(|other| {
            (0..n)
                .map(|i| if axis == 0 { grid.index([i, other]) } else { grid.index([other, i]) })
                .collect()
        })
        .collect()
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "epsilon",
            detail: format!("must be positive and finite, got {eps}"),
        });
    }
    Ok(())
}

/// `w_ε(x) = min_y w(y) + |x−y|²/(2ε)` over grid nodes.
pub fn inf_convolution(w: &GridField, eps: f64) -> Result<GridField> {
    check_eps(eps)?;
    let g = *w.grid();
    let mut v = w.values().to_vec();
    for axis in 0..g.dim() {
        inf_pass(&mut v, &g, axis, eps)?;
    }
    GridField::from_values(g, v)
}

/// `w^ε(x) = max_y w(y) − |x−y|²/(2ε)` over grid nodes.
pub fn sup_convolution(w: &GridField, eps: f64) -> Result<GridField> {
    Ok(inf_convolution(&w.scale(-1.0), eps)?.scale(-1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RegularizationParams {
    pub eta: f64,
    pub k: f64,
    /// `K η³`
    pub eps: f64,
    /// `η⁴`
    pub delta: f64,
}

impl RegularizationParams {
    pub fn new(eta: f64, k: f64, grid: &PeriodicGrid) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "eta",
                detail: format!("must be positive, got {eta}"),
            });
        }
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "K",
                detail: format!("must be positive, got {k}"),
            });
        }
        let eps = k * eta.powi(3);
        let delta = eta.powi(4);
        if !(eps < eta) {
            return Err(Error::InvalidParameter {
                name: "epsilon",
                detail: format!("K η³ = {eps} must be below η = {eta}"),
            });
        }
        let fit = grid.spacing() * grid.n_per_axis() as f64 / 4.0;
        if delta > fit {
            return Err(Error::InvalidParameter {
                name: "delta",
                detail: format!("η⁴ = {delta} exceeds a quarter period {fit}"),
            });
        }
        Ok(Self { eta, k, eps, delta })
    }
}

/// `(w^{η+ε})_ε`.
pub fn lasry_lions(w: &GridField, params: &RegularizationParams) -> Result<GridField> {
    inf_convolution(&sup_convolution(w, params.eta + params.eps)?, params.eps)
}

/// Second-difference bounds of a Lasry-Lions output.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HessianCheck {
    pub min_d2: f64,
    pub max_d2: f64,
    /// `−1/η − (1/ε − 1/(η+ε))/4`: the semiconvexity that survives restricting
    /// the inner minimization to grid nodes. Reduces to `−1/η` when the inner
    /// minimizer never leaves its node.
    pub lower_limit: f64,
    /// `1/ε`
    pub upper_limit: f64,
    pub pass: bool,
}

pub const TOL_HESSIAN: f64 = 1e-9;

pub fn hessian_check(out: &GridField, params: &RegularizationParams) -> HessianCheck {
    let (min_d2, max_d2) = second_difference_range(out);
    let (eta, eps) = (params.eta, params.eps);
    let lower_limit = -1.0 / eta - 0.25 * (1.0 / eps - 1.0 / (eta + eps));
    let upper_limit = 1.0 / eps;
    HessianCheck {
        min_d2,
        max_d2,
        lower_limit,
        upper_limit,
        pass: min_d2 >= lower_limit - TOL_HESSIAN && max_d2 <= upper_limit + TOL_HESSIAN,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AutoK {
    pub k: f64,
    pub m1: f64,
    pub m2: f64,
    pub denominator: f64,
    /// Set when the denominator is not positive and `K = 1` was used instead.
    pub fallback: bool,
}

/// `K = 1/((n−1) + M₁ + M₂ − c₀)` with `M₁ = max tr A` and
/// `M₂ = max{|H(x,p)| : |p| ≤ Lip(w)} + |c₀|`.
pub fn auto_k(problem: &ProblemSpec, w: &GridField, c0: f64) -> AutoK {
    let g = problem.grid;
    let d = g.dim();
    let m1 = (0..g.len())
        .map(|i| problem.diffusion.trace(&g.point(i)[..d]))
        .fold(0.0, f64::max);
    let lip = crate::grid::discrete_lipschitz(w);
    let pot = problem.hamiltonian.potential();
    let audit = audit_grid(d, pot.max_frequency());
    // For fixed x, |½|p|² + W| over |p| ≤ L is largest at an endpoint.
    let hmax = (0..audit.len())
        .map(|i| {
            let wx = pot.eval(&audit.point(i)[..d]);
            wx.abs().max((wx + 0.5 * lip * lip).abs())
        })
        .fold(0.0, f64::max);
    let m2 = hmax + c0.abs();
    let denominator = (d as f64 - 1.0) + m1 + m2 - c0;
    if denominator > 0.0 {
        AutoK {
            k: 1.0 / denominator,
            m1,
            m2,
            denominator,
            fallback: false,
        }
    } else {
        AutoK {
            k: 1.0,
            m1,
            m2,
            denominator,
            fallback: true,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Mollified {
    pub field: GridField,
    pub sub_resolution: bool,
    /// Number of kernel offsets with positive weight.
    pub support: usize,
}

/// Periodic convolution with the bump `(1 − |y/δ|²)⁴`, normalized to unit
/// discrete mass. For `δ < 2h` the field is returned unchanged.
pub fn mollify(w: &GridField, delta: f64) -> Mollified {
    let g = *w.grid();
    let h = g.spacing();
    if !(delta >= 2.0 * h) {
        return Mollified {
            field: w.clone(),
            sub_resolution: true,
            support: 1,
        };
    }
    let r = (delta / h).ceil() as isize;
    let mut kernel: Vec<([isize; 2], f64)> = Vec::new();
    let range1 = if g.dim() == 2 { -r..=r } else { 0..=0 };
    for j1 in range1 {
        for j0 in -r..=r {
            let rho2 = ((j0 * j0 + j1 * j1) as f64) * h * h / (delta * delta);
            if rho2 < 1.0 {
                kernel.push(([j0, j1], (1.0 - rho2).powi(4)));
            }
        }
    }
    let mass: f64 = kernel.iter().map(|k| k.1).sum();
    for k in &mut kernel {
        k.1 /= mass;
    }
    let v = w.values();
    let out: Vec<f64> = (0..g.len())
        .into_par_iter()
        .map(|i| {
            kernel
                .iter()
                .map(|(off, kw)| {
                    let mut j = g.shift(i, 0, off[0]);
                    if g.dim() == 2 {
                        j = g.shift(j, 1, off[1]);
                    }
                    kw * v[j]
                })
                .sum()
        })
        .collect();
    Mollified {
        field: GridField::from_values(g, out).expect("convolution of finite values"),
        sub_resolution: false,
        support: kernel.len(),
    }
}

/// Largest `|D³u|` over axes, using the forward third difference.
pub fn max_third_difference(u: &GridField) -> f64 {
    let g = *u.grid();
    let h = g.spacing();
    let v = u.values();
    let mut m: f64 = 0.0;
    for axis in 0..g.dim() {
        for i in 0..g.len() {
            let a = g.shift(i, axis, -1);
            let b = g.shift(i, axis, 1);
            let c = g.shift(i, axis, 2);
            m = m.max(((v[c] - 3.0 * v[b] + 3.0 * v[i] - v[a]) / (h * h * h)).abs());
        }
    }
    m
}

/// `(min, max)` of second differences over all nodes and axes.
pub fn second_difference_range(u: &GridField) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for axis in 0..u.grid().dim() {
        for &d in second_difference(u, axis).expect("valid axis").values() {
            lo = lo.min(d);
            hi = hi.max(d);
        }
    }
    (lo, hi)
}

#[derive(Clone, Debug, Serialize)]
pub struct SubsolutionCertificate {
    #[serde(skip)]
    pub w_reg: GridField,
    /// Largest value of the centered residual minus `c₀`.
    pub max_excess: f64,
    /// `‖w_reg − w‖∞`
    pub sup_distance: f64,
    pub params: RegularizationParams,
    pub auto_k: AutoK,
    pub sub_resolution: bool,
}

/// Centered-difference residual `−η²Δw − tr(A D²w) + H(x, Dw) − c₀` per node.
pub fn centered_residual(w: &GridField, eta: f64, problem: &ProblemSpec, c0: f64) -> Result<GridField> {
    let g = *w.grid();
    let d = g.dim();
    let h = g.spacing();
    let a = problem.diffusion.sample(&g);
    let diff = diffusion_term(w, &a)?;
    let mut lap = vec![0.0; g.len()];
    for axis in 0..d {
        for (l, s) in lap.iter_mut().zip(second_difference(w, axis)?.values()) {
            *l += s;
        }
    }
    let v = w.values();
    let out = (0..g.len())
        .map(|i| {
            let x = g.point(i);
            let mut p = [0.0; 2];
            for (axis, slot) in p.iter_mut().enumerate().take(d) {
                *slot = (v[g.shift(i, axis, 1)] - v[g.shift(i, axis, -1)]) / (2.0 * h);
            }
            -eta * eta * lap[i] - diff[i] + problem.hamiltonian.eval_h(&x[..d], &p[..d]) - c0
        })
        .collect();
    GridField::from_values(g, out)
}

/// Regularize a subsolution and report how far it is from being a smooth one.
pub fn smooth_subsolution_certificate(
    w: &GridField,
    eta: f64,
    problem: &ProblemSpec,
    c0: f64,
) -> Result<SubsolutionCertificate> {
    let auto = auto_k(problem, w, c0);
    let params = RegularizationParams::new(eta, auto.k, w.grid())?;
    let ll = lasry_lions(w, &params)?;
    let m = mollify(&ll, params.delta);
    let res = centered_residual(&m.field, eta, problem, c0)?;
    Ok(SubsolutionCertificate {
        max_excess: res.max(),
        sup_distance: m.field.sup_distance(w)?,
        w_reg: m.field,
        params,
        auto_k: auto,
        sub_resolution: m.sub_resolution,
    })
}
