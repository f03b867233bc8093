//! Monotone Engquist-Osher scheme for the perturbed discounted equation
//!
//! ```text
//! f(x, λu) + H(x, Du) + λV(x) = η²Δu + tr(A(x) D²u) + c_H
//! ```
//!
//! on the periodic grid, solved by Newton's method with the exact Jacobian.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BestIterate, Error, Result};
use crate::fit::{rate_fit, RateFit};
use crate::grid::{discrete_lipschitz, GridField, PeriodicGrid};
use crate::models::{
    validate_assumptions, DiffusionSpec, DiscountSpec, HamiltonianSpec, PotentialSpec,
    TrigSeries, ValidationReport,
};
use crate::sparse::{SkylineLu, SparseMatrix};

/// Full data of one instance of the perturbed equation, minus `(λ, η)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub hamiltonian: HamiltonianSpec,
    pub diffusion: DiffusionSpec,
    pub discount: DiscountSpec,
    pub potential: PotentialSpec,
    pub c_h: f64,
    pub grid: PeriodicGrid,
}

impl ProblemSpec {
    pub fn new(
        hamiltonian: HamiltonianSpec,
        diffusion: DiffusionSpec,
        discount: DiscountSpec,
        potential: PotentialSpec,
        c_h: f64,
        grid: PeriodicGrid,
    ) -> Self {
        Self {
            hamiltonian,
            diffusion,
            discount,
            potential,
            c_h,
            grid,
        }
    }

    /// `H = ½|p|²`, no diffusion, linear discount, `V ≡ 0`, `c_H = 0`.
    pub fn trivial(grid: PeriodicGrid) -> Self {
        Self::new(
            HamiltonianSpec::free(),
            DiffusionSpec::zero(),
            DiscountSpec::Linear,
            PotentialSpec::zero(),
            0.0,
            grid,
        )
    }

    /// `H = ½|p|² + cos 4πx`, first order, linear discount, `V ≡ 0`, `c_H = 1`.
    pub fn cos4pi(grid: PeriodicGrid) -> Self {
        Self::new(
            HamiltonianSpec::cos4pi(),
            DiffusionSpec::zero(),
            DiscountSpec::Linear,
            PotentialSpec::zero(),
            1.0,
            grid,
        )
    }

    pub fn with_potential(mut self, potential: PotentialSpec) -> Self {
        self.potential = potential;
        self
    }

    pub fn with_discount(mut self, discount: DiscountSpec) -> Self {
        self.discount = discount;
        self
    }

    pub fn with_diffusion(mut self, diffusion: DiffusionSpec) -> Self {
        self.diffusion = diffusion;
        self
    }

    pub fn with_c_h(mut self, c_h: f64) -> Self {
        self.c_h = c_h;
        self
    }

    pub fn with_grid(mut self, grid: PeriodicGrid) -> Self {
        if let PotentialSpec::Sampled { field } = &self.potential {
            if field.grid() != &grid {
                let d = grid.dim();
                let f = field.clone();
                self.potential =
                    PotentialSpec::sampled(GridField::from_fn(grid, |x| f.interpolate(&x[..d])));
            }
        }
        self.grid = grid;
        self
    }

    pub fn discretize(&self) -> Discretization {
        Discretization::new(self)
    }
}

/// Node samples of every coefficient, computed once per solve.
#[derive(Clone, Debug)]
pub struct Discretization {
    pub grid: PeriodicGrid,
    pub discount: DiscountSpec,
    pub c_h: f64,
    pub w: Vec<f64>,
    pub sigma: Vec<f64>,
    pub v: Vec<f64>,
    /// Diffusion per axis.
    pub a: Vec<Vec<f64>>,
}

impl Discretization {
    pub fn new(problem: &ProblemSpec) -> Self {
        let g = problem.grid;
        let d = g.dim();
        let w = GridField::from_fn(g, |x| problem.hamiltonian.w(&x[..d])).into_values();
        Self {
            grid: g,
            discount: problem.discount.clone(),
            c_h: problem.c_h,
            w,
            sigma: problem.discount.sigma_field(&g).into_values(),
            v: problem.potential.sample(&g).into_values(),
            a: problem
                .diffusion
                .sample(&g)
                .into_iter()
                .map(GridField::into_values)
                .collect(),
        }
    }

    /// Smallest constant `k` (up to bisection tolerance) with
    /// `f(x, λk) + W + λV ≥ c_H` at every node. Constants carry no gradient
    /// or diffusion, so such a `k` is a supersolution of the scheme.
    pub fn constant_supersolution(&self, lambda: f64) -> f64 {
        let gap = |r: f64| {
            (0..self.w.len())
                .map(|i| {
                    self.discount.f_with_sigma(self.sigma[i], r) + self.w[i] + lambda * self.v[i] - self.c_h
                })
                .fold(f64::INFINITY, f64::min)
        };
        if gap(0.0) >= 0.0 {
            return 0.0;
        }
        let mut hi = 1.0;
        while gap(hi) < 0.0 {
            hi *= 2.0;
            if !hi.is_finite() {
                return 0.0;
            }
        }
        let mut lo = if hi > 1.0 { hi / 2.0 } else { 0.0 };
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if gap(mid) >= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi / lambda
    }

    /// Smallest constant `c ≥ 0` such that `u + c` is a supersolution, given
    /// `f = F(u)`. Only the discount term depends on constants, and it is
    /// increasing, so the shift is explicit node by node.
    pub fn supersolution_shift(&self, u: &[f64], f: &[f64], lambda: f64) -> Option<f64> {
        if !(lambda > 0.0) {
            return None;
        }
        let mut c: f64 = 0.0;
        for i in 0..u.len() {
            let s = self.sigma[i];
            let rest = f[i] - self.discount.f_with_sigma(s, lambda * u[i]);
            let r = self.discount.f_inverse_with_sigma(s, -rest);
            c = c.max(r / lambda - u[i]);
        }
        c.is_finite().then_some(c + 1e-12 * (1.0 + c))
    }

    /// Residual `F(u)` and, on request, the Jacobian `F'(u)`.
    pub fn evaluate(
        &self,
        u: &[f64],
        lambda: f64,
        eta: f64,
        with_jacobian: bool,
    ) -> (Vec<f64>, Option<SparseMatrix>) {
        let g = self.grid;
        let n = g.len();
        let inv_h = g.n_per_axis() as f64;
        let inv_h2 = inv_h * inv_h;
        let eta2 = eta * eta;
        let mut res = Vec::with_capacity(n);
        let mut trip = Vec::with_capacity(if with_jacobian { n * (1 + 2 * g.dim()) } else { 0 });
        for i in 0..n {
            let s = self.sigma[i];
            let r = lambda * u[i];
            let mut fi = self.discount.f_with_sigma(s, r) + self.w[i] + lambda * self.v[i] - self.c_h;
            let mut diag = lambda * self.discount.dr_f_with_sigma(s, r);
            for axis in 0..g.dim() {
                let il = g.shift(i, axis, -1);
                let ir = g.shift(i, axis, 1);
                let pm = ((u[i] - u[il]) * inv_h).max(0.0);
                let pp = ((u[ir] - u[i]) * inv_h).min(0.0);
                let nu = eta2 + self.a[axis][i];
                fi += 0.5 * (pm * pm + pp * pp) - nu * (u[ir] - 2.0 * u[i] + u[il]) * inv_h2;
                if with_jacobian {
                    diag += (pm - pp) * inv_h + 2.0 * nu * inv_h2;
                    trip.push((i, il, -pm * inv_h - nu * inv_h2));
                    trip.push((i, ir, pp * inv_h - nu * inv_h2));
                }
            }
            if with_jacobian {
                trip.push((i, i, diag));
            }
            res.push(fi);
        }
        let jac = with_jacobian.then(|| SparseMatrix::from_triplets(n, trip));
        (res, jac)
    }
}

/// Engquist-Osher numerical Hamiltonian for `½|p|² + W(x)`.
pub fn numerical_hamiltonian(
    spec: &HamiltonianSpec,
    x: &[f64],
    p_minus: &[f64],
    p_plus: &[f64],
) -> f64 {
    spec.w(x)
        + 0.5
            * p_minus
                .iter()
                .zip(p_plus)
                .map(|(&m, &p)| m.max(0.0).powi(2) + p.min(0.0).powi(2))
                .sum::<f64>()
}

fn check_lambda_eta(lambda: f64, eta: f64, allow_zero_lambda: bool) -> Result<()> {
    let lambda_ok = lambda.is_finite() && (lambda > 0.0 || (allow_zero_lambda && lambda == 0.0));
    if !lambda_ok {
        return Err(Error::InvalidParameter {
            name: "lambda",
            detail: format!("must be positive and finite, got {lambda}"),
        });
    }
    if !(eta.is_finite() && eta >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "eta",
            detail: format!("must be nonnegative and finite, got {eta}"),
        });
    }
    Ok(())
}

/// Discrete residual of the scheme at `u`.
pub fn residual(problem: &ProblemSpec, u: &GridField, lambda: f64, eta: f64) -> Result<GridField> {
    check_lambda_eta(lambda, eta, true)?;
    if u.grid() != &problem.grid {
        return Err(Error::IncompatibleGrid(format!(
            "field on {:?}, problem on {:?}",
            u.grid(),
            problem.grid
        )));
    }
    validate_assumptions(problem, 0.0)?;
    let (f, _) = problem.discretize().evaluate(u.values(), lambda, eta, false);
    Ok(GridField::from_raw(problem.grid, f))
}

/// Exact Jacobian of the residual at `u`.
pub fn jacobian(problem: &ProblemSpec, u: &GridField, lambda: f64, eta: f64) -> Result<SparseMatrix> {
    check_lambda_eta(lambda, eta, true)?;
    if u.grid() != &problem.grid {
        return Err(Error::IncompatibleGrid(format!(
            "field on {:?}, problem on {:?}",
            u.grid(),
            problem.grid
        )));
    }
    let (_, j) = problem.discretize().evaluate(u.values(), lambda, eta, true);
    Ok(j.expect("jacobian requested"))
}

#[derive(Clone, Debug)]
pub struct SolveOptions {
    pub tol: f64,
    /// Budget of Newton iterations.
    pub max_iter: usize,
    pub lambda_ceiling: f64,
    pub initial: Option<GridField>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200,
            lambda_ceiling: 0.5,
            initial: None,
        }
    }
}

impl SolveOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }

    pub fn starting_from(mut self, u: GridField) -> Self {
        self.initial = Some(u);
        self
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveReport {
    pub u: GridField,
    pub residual_sup: f64,
    pub iterations: usize,
    pub pseudo_time_steps: usize,
    pub lambda: f64,
    pub eta: f64,
    pub lipschitz: f64,
    pub lambda_u_sup: f64,
    pub wall_time: f64,
    pub validation: ValidationReport,
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| if x.is_nan() { f64::NAN } else { m.max(x.abs()) })
}

/// Initial iterate from the solution on the grid with half the nodes per
/// axis, recursively down to 64. Newton started far from the solution moves
/// information about one node per iteration, so the coarse guess matters.
/// The base case is a constant supersolution.
fn nested_initial(problem: &ProblemSpec, disc: &Discretization, lambda: f64, eta: f64, opts: &SolveOptions) -> Vec<f64> {
    let g = problem.grid;
    let n = g.n_per_axis();
    if n >= 128 && n.is_multiple_of(2) {
        if let Ok(coarse_grid) = PeriodicGrid::new(g.dim(), n / 2) {
            let coarse = problem.clone().with_grid(coarse_grid);
            let mut o = opts.clone();
            o.initial = None;
            o.tol = opts.tol.max(1e-8);
            if let Ok(rep) = solve(&coarse, lambda, eta, &o) {
                let d = g.dim();
                return GridField::from_fn(g, |x| rep.u.interpolate(&x[..d])).into_values();
            }
        }
    }
    if lambda > 0.0 {
        vec![disc.constant_supersolution(lambda); g.len()]
    } else {
        vec![0.0; g.len()]
    }
}

/// Solve the scheme to `‖F(u)‖∞ ≤ tol`.
///
/// Full Newton steps are taken whenever they reduce the residual or land on
/// a supersolution; the residual is convex in `u` with an M-matrix Jacobian,
/// so from a supersolution the Newton iterates decrease monotonically to the
/// discrete solution. A rejected full step is replaced by lifting the
/// iterate by a constant onto a supersolution. At λ = 0 that is impossible;
/// the step is then halved up to 30 times, and after that 200 explicit
/// pseudo-time steps are taken before Newton resumes.
pub fn solve(problem: &ProblemSpec, lambda: f64, eta: f64, opts: &SolveOptions) -> Result<SolveReport> {
    let start = Instant::now();
    check_lambda_eta(lambda, eta, false)?;
    if lambda > opts.lambda_ceiling {
        return Err(Error::LambdaCeiling {
            lambda,
            ceiling: opts.lambda_ceiling,
        });
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidParameter {
            name: "tol",
            detail: format!("must be positive, got {}", opts.tol),
        });
    }
    validate_assumptions(problem, 0.0)?;
    let g = problem.grid;
    let disc = problem.discretize();
    let mut u = match &opts.initial {
        Some(init) => {
            if init.grid() != &g {
                return Err(Error::IncompatibleGrid("initial iterate".into()));
            }
            init.values().to_vec()
        }
        None => nested_initial(problem, &disc, lambda, eta, opts),
    };
    let (mut f, _) = disc.evaluate(&u, lambda, eta, false);
    let mut r = sup(&f);
    let mut iterations = 0;
    let mut pseudo = 0;
    let mut best = (r, u.clone());
    let mut stalled = 0;

    while !(r <= opts.tol) && iterations < opts.max_iter {
        iterations += 1;
        let (_, jac) = disc.evaluate(&u, lambda, eta, true);
        let jac = jac.expect("jacobian requested");
        let mut accepted = false;
        if let Ok(lu) = SkylineLu::factor(&jac) {
            let neg: Vec<f64> = f.iter().map(|v| -v).collect();
            let delta = lu.solve(&neg);
            // Convexity gives F(u + δ) ≥ F(u) + Jδ, which is zero up to the
            // linear solve error; the supersolution test allows that much.
            let linear_err = sup(&jac.mul_vec(&delta).iter().zip(&f).map(|(a, b)| a + b).collect::<Vec<_>>());
            let cand: Vec<f64> = u.iter().zip(&delta).map(|(a, d)| a + d).collect();
            let (fc, _) = disc.evaluate(&cand, lambda, eta, false);
            let rc = sup(&fc);
            let slack = 0.5 * opts.tol + 2.0 * linear_err + 16.0 * f64::EPSILON * r.max(rc);
            if rc.is_finite() && rc < r {
                (u, f, r, accepted) = (cand, fc, rc, true);
            } else {
                // Either supersolution is a valid restart for the monotone
                // descent: the full step, or the iterate lifted by the
                // smallest constant (not available at λ = 0). The full step
                // can overshoot by orders of magnitude, so take the smaller.
                // Lifting an iterate that is already a supersolution would
                // only stall.
                let mut restart = (rc.is_finite() && fc.iter().all(|&v| v >= -slack)).then_some((cand, fc, rc));
                let lift = if f.iter().all(|&v| v >= -0.5 * opts.tol - 16.0 * f64::EPSILON * r) {
                    None
                } else {
                    disc.supersolution_shift(&u, &f, lambda).filter(|&c| c > 0.0)
                };
                if let Some(c) = lift {
                    let lifted: Vec<f64> = u.iter().map(|a| a + c).collect();
                    let (fl, _) = disc.evaluate(&lifted, lambda, eta, false);
                    let rl = sup(&fl);
                    let ok = rl.is_finite() && fl.iter().all(|&v| v >= -0.5 * opts.tol - 16.0 * f64::EPSILON * rl);
                    if ok && restart.as_ref().is_none_or(|x| rl < x.2) {
                        restart = Some((lifted, fl, rl));
                    }
                }
                if let Some((cu, cf, cr)) = restart {
                    (u, f, r, accepted) = (cu, cf, cr, true);
                }
            }
            let mut step = 0.5;
            for _ in 0..30 {
                if accepted {
                    break;
                }
                let cand: Vec<f64> = u.iter().zip(&delta).map(|(a, d)| a + step * d).collect();
                let (fc, _) = disc.evaluate(&cand, lambda, eta, false);
                let rc = sup(&fc);
                if rc.is_finite() && rc < r {
                    (u, f, r, accepted) = (cand, fc, rc, true);
                }
                step *= 0.5;
            }
        }
        if !accepted {
            let diag_max = jac.diagonal().into_iter().fold(0.0, f64::max);
            let tau = 0.9 / diag_max.max(f64::MIN_POSITIVE);
            for _ in 0..200 {
                for (ui, fi) in u.iter_mut().zip(&f) {
                    *ui -= tau * fi;
                }
                let (fc, _) = disc.evaluate(&u, lambda, eta, false);
                f = fc;
                pseudo += 1;
            }
            r = sup(&f);
        }
        if r < best.0 {
            best = (r, u.clone());
            stalled = 0;
        } else if !accepted {
            // Newton failed and marching did not help either: rounding floor.
            stalled += 1;
            if stalled >= 3 {
                break;
            }
        }
    }

    if !(r <= opts.tol) {
        let (res, bu) = if r < best.0 { (r, u) } else { best };
        return Err(Error::NonConvergence {
            iterations,
            residual: res,
            best: BestIterate(Box::new(GridField::from_raw(g, bu))),
        });
    }

    let u = GridField::from_raw(g, u);
    let lambda_u_sup = lambda * u.sup_norm();
    let validation = validate_assumptions(problem, lambda_u_sup)?;
    Ok(SolveReport {
        lipschitz: discrete_lipschitz(&u),
        u,
        residual_sup: r,
        iterations,
        pseudo_time_steps: pseudo,
        lambda,
        eta,
        lambda_u_sup,
        wall_time: start.elapsed().as_secs_f64(),
        validation,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ErgodicReport {
    pub c_h: f64,
    /// `(λ, c(λ))` in the order of the input sequence.
    pub table: Vec<(f64, f64)>,
    pub eta: f64,
}

/// Estimate `c_H` from `c(λ) = −λ·mean(w_λ)` of the plain discounted equation
/// `λw + H(x,Dw) = η²Δw + tr(A D²w)`, extrapolated linearly to `λ = 0` from
/// the last two entries.
///
/// Each solve is done for `v = w + c₀/λ`, which satisfies the same scheme
/// with `c_H = c₀`; this keeps the unknown O(1) instead of O(1/λ). The shift
/// `c₀` starts at `max W` and then follows the previous estimate.
pub fn estimate_ergodic_constant(
    problem: &ProblemSpec,
    eta: f64,
    lambda_seq: &[f64],
    opts: &SolveOptions,
) -> Result<ErgodicReport> {
    if lambda_seq.len() < 2 {
        return Err(Error::InvalidParameter {
            name: "lambda_seq",
            detail: "needs at least two entries".into(),
        });
    }
    if lambda_seq.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidParameter {
            name: "lambda_seq",
            detail: "must be strictly decreasing".into(),
        });
    }
    let dim = problem.grid.dim();
    let mut c0 = problem.hamiltonian.potential().extrema(dim).1;
    let mut table = Vec::with_capacity(lambda_seq.len());
    let mut warm: Option<GridField> = None;
    for &lambda in lambda_seq {
        let mut c = c0;
        // A poor shift leaves mean(v) = O((c0 − c)/λ) and the residual then
        // stalls at a rounding floor proportional to ‖v‖∞; re-solve with the
        // improved shift until the unknown is O(1).
        for pass in 0..4 {
            let plain = problem
                .clone()
                .with_discount(DiscountSpec::Linear)
                .with_potential(PotentialSpec::zero())
                .with_c_h(c0);
            let mut o = opts.clone();
            o.initial = warm.take();
            let coarse = pass < 3;
            if coarse {
                o.tol = opts.tol.max(1e-6);
            }
            let rep = solve(&plain, lambda, eta, &o)?;
            let m = rep.u.mean();
            c = c0 - lambda * m;
            warm = Some(rep.u.offset(-m));
            if !coarse || m.abs() <= 1.0 {
                if coarse {
                    let mut fine = opts.clone();
                    fine.initial = Some(rep.u);
                    let rep = solve(&plain, lambda, eta, &fine)?;
                    c = c0 - lambda * rep.u.mean();
                    warm = Some(rep.u.offset(-rep.u.mean()));
                }
                break;
            }
            c0 = c;
        }
        table.push((lambda, c));
        c0 = c;
    }
    let (l1, c1) = table[table.len() - 2];
    let (l2, c2) = table[table.len() - 1];
    let slope = (c1 - c2) / (l1 - l2);
    Ok(ErgodicReport {
        c_h: c2 - slope * l2,
        table,
        eta,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct GapRow {
    pub eta: f64,
    /// `‖u^η_λ − u_λ‖∞`; `None` if the solve failed.
    pub gap: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GapReport {
    pub lambda: f64,
    pub rows: Vec<GapRow>,
    pub fit: Option<RateFit>,
    /// `max(gap/η) / min(gap/η)` over successful rows.
    pub ratio_spread: f64,
}

/// Gap between viscous and inviscid discrete solutions at fixed `λ`.
pub fn vanishing_viscosity_gap(
    problem: &ProblemSpec,
    lambda: f64,
    eta_seq: &[f64],
    opts: &SolveOptions,
) -> Result<GapReport> {
    let base = solve(problem, lambda, 0.0, opts)?;
    let warm = opts.clone().starting_from(base.u.clone());
    let rows: Vec<GapRow> = eta_seq
        .par_iter()
        .map(|&eta| GapRow {
            eta,
            gap: solve(problem, lambda, eta, &warm)
                .ok()
                .map(|r| r.u.sup_distance(&base.u).expect("same grid")),
        })
        .collect();
    let pairs: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.gap.map(|g| (r.eta, g)))
        .collect();
    let ratios: Vec<f64> = pairs.iter().map(|(e, g)| g / e).collect();
    let ratio_spread = if ratios.is_empty() {
        f64::NAN
    } else {
        ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            / ratios.iter().copied().fold(f64::INFINITY, f64::min)
    };
    Ok(GapReport {
        lambda,
        fit: rate_fit(&pairs, opts.tol).ok(),
        rows,
        ratio_spread,
    })
}

/// Convenience: the cosine potential `amplitude · cos(2πk x)`.
pub fn cosine_potential(amplitude: f64, k: i32) -> PotentialSpec {
    PotentialSpec::closed(TrigSeries::cosine(amplitude, k))
}
