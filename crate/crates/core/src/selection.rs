//! Vanishing-discount experiments: sweeps, limit extraction, the constraint
//! checks, comparison experiments and the O(λ) rate harness.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fit::{rate_fit, RateFit};
use crate::grid::{GridField, PeriodicGrid};
use crate::mather::{constraint_functional, DiscreteMeasure, EtaRule};
use crate::models::{DiscountSpec, HamiltonianSpec, PotentialSpec};
use crate::solver::{residual, solve, ProblemSpec, SolveOptions, SolveReport};

#[derive(Clone, Debug)]
pub struct SweepOptions {
    pub solve: SolveOptions,
    pub eta_rule: EtaRule,
    /// The limit is reported only if the last pairwise distance is below this.
    pub cauchy_tol: f64,
    pub richardson: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            solve: SolveOptions::default(),
            eta_rule: EtaRule::Zero,
            cauchy_tol: 0.01,
            richardson: false,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub eta: f64,
    pub report: Option<SolveReport>,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepResult {
    pub lambdas: Vec<f64>,
    pub rows: Vec<SweepRow>,
    /// `‖u_{λ_i} − u_{λ_{i+1}}‖∞` between successive converged rows.
    pub pairwise: Vec<f64>,
    pub distances_decrease: bool,
    pub limit: Option<GridField>,
    pub richardson_used: bool,
    pub max_lipschitz: f64,
    /// Last-half max Lipschitz ≤ first-half max + 0.05.
    pub equi_lipschitz: bool,
    pub max_lambda_u: f64,
}

impl SweepResult {
    /// Converged row at the smallest λ.
    pub fn last(&self) -> Option<&SolveReport> {
        self.rows.iter().rev().find_map(|r| r.report.as_ref())
    }

    pub fn converged(&self) -> impl Iterator<Item = &SolveReport> {
        self.rows.iter().filter_map(|r| r.report.as_ref())
    }
}

fn check_sequence(lambda_seq: &[f64], min_len: usize) -> Result<()> {
    if lambda_seq.len() < min_len {
        return Err(Error::InvalidParameter {
            name: "lambda_seq",
            detail: format!("needs at least {min_len} entries, got {}", lambda_seq.len()),
        });
    }
    if lambda_seq.iter().any(|&l| !(l > 0.0)) || lambda_seq.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidParameter {
            name: "lambda_seq",
            detail: "must be positive and strictly decreasing".into(),
        });
    }
    Ok(())
}

/// Solve at every λ in parallel and collect the convergence diagnostics.
pub fn lambda_sweep(problem: &ProblemSpec, lambda_seq: &[f64], opts: &SweepOptions) -> Result<SweepResult> {
    check_sequence(lambda_seq, 4)?;
    let solved: Vec<(f64, f64, Result<SolveReport>)> = lambda_seq
        .par_iter()
        .map(|&lambda| {
            let eta = opts.eta_rule.eta(lambda);
            (lambda, eta, solve(problem, lambda, eta, &opts.solve))
        })
        .collect();
    let mut rows = Vec::with_capacity(solved.len());
    for (lambda, eta, res) in solved {
        let (report, failure) = match res {
            Ok(rep) => (Some(rep), None),
            Err(e @ (Error::NonConvergence { .. } | Error::SingularSystem(_))) => (None, Some(e.to_string())),
            // Configuration problems are not per-row failures.
            Err(e) => return Err(e),
        };
        rows.push(SweepRow {
            lambda,
            eta,
            report,
            failure,
        });
    }
    let failed = rows.iter().filter(|r| r.report.is_none()).count();
    if 4 * failed > rows.len() {
        return Err(Error::SweepFailed {
            failed,
            total: rows.len(),
        });
    }
    let ok: Vec<&SolveReport> = rows.iter().filter_map(|r| r.report.as_ref()).collect();
    let pairwise: Vec<f64> = ok
        .windows(2)
        .map(|w| w[0].u.sup_distance(&w[1].u).expect("same grid"))
        .collect();
    let distances_decrease = pairwise.windows(2).all(|w| w[1] <= w[0]);
    let lips: Vec<f64> = ok.iter().map(|r| r.lipschitz).collect();
    let half = lips.len() / 2;
    let first = lips[..half.max(1)].iter().copied().fold(0.0, f64::max);
    let last = lips[half..].iter().copied().fold(0.0, f64::max);
    let max_lambda_u = ok.iter().map(|r| r.lambda_u_sup).fold(0.0, f64::max);

    let mut richardson_used = false;
    let limit = match pairwise.last() {
        Some(&d) if d <= opts.cauchy_tol => {
            let n = ok.len();
            let (prev, fin) = (ok[n - 2], ok[n - 1]);
            let halved = (fin.lambda / prev.lambda - 0.5).abs() < 1e-12;
            let first_order = pairwise.len() >= 2 && {
                let r = pairwise[pairwise.len() - 1] / pairwise[pairwise.len() - 2];
                (0.35..=0.65).contains(&r)
            };
            if opts.richardson && halved && first_order {
                richardson_used = true;
                Some(fin.u.scale(2.0).sub(&prev.u)?)
            } else {
                Some(fin.u.clone())
            }
        }
        _ => None,
    };
    Ok(SweepResult {
        lambdas: lambda_seq.to_vec(),
        rows,
        pairwise,
        distances_decrease,
        limit,
        richardson_used,
        max_lipschitz: lips.iter().copied().fold(0.0, f64::max),
        equi_lipschitz: last <= first + 0.05,
        max_lambda_u,
    })
}

/// Slack model `C·(h + λ + η)`.
pub fn slack(c: f64, h: f64, lambda: f64, eta: f64) -> f64 {
    c * (h + lambda + eta)
}

#[derive(Clone, Debug, Serialize)]
pub struct ConstraintRow {
    /// `∫ ∂_r f(x,0) u₀ + V dμ`
    pub functional: f64,
    /// `∫ f(x, λu_λ) + λV dμ` at the smallest λ.
    pub lambda_level: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct TheoremAReport {
    pub slack: f64,
    pub lambda_min: f64,
    pub rows: Vec<ConstraintRow>,
    /// Smallest `slack − functional`.
    pub min_margin: f64,
    pub pass: bool,
}

/// Check the constraint inequality for the sweep limit against each measure.
pub fn theorem_a_certificate(
    sweep: &SweepResult,
    measures: &[&DiscreteMeasure],
    problem: &ProblemSpec,
    slack_c: f64,
) -> Result<TheoremAReport> {
    let last = sweep.last().ok_or(Error::SweepFailed {
        failed: sweep.rows.len(),
        total: sweep.rows.len(),
    })?;
    let u0 = sweep.limit.as_ref().unwrap_or(&last.u);
    let h = problem.grid.spacing();
    let s = slack(slack_c, h, last.lambda, last.eta);
    let d = problem.grid.dim();
    let rows: Vec<ConstraintRow> = measures
        .iter()
        .map(|m| {
            let functional = constraint_functional(m, u0, &problem.potential, &problem.discount);
            let lambda_level = m.integrate(|a| {
                let x = &a.x[..d];
                problem.discount.f(x, last.lambda * last.u.interpolate(x))
                    + last.lambda * problem.potential.eval(x)
            });
            ConstraintRow {
                functional,
                lambda_level,
                pass: functional <= s && lambda_level <= last.lambda * s,
            }
        })
        .collect();
    let min_margin = rows.iter().map(|r| s - r.functional).fold(f64::INFINITY, f64::min);
    Ok(TheoremAReport {
        slack: s,
        lambda_min: last.lambda,
        pass: rows.iter().all(|r| r.pass),
        rows,
        min_margin,
    })
}

/// Sampled one-parameter family of first-order ergodic solutions in 1D.
#[derive(Clone, Debug, Serialize)]
pub struct SolutionFamily1D {
    pub c_h: f64,
    /// Nodes where `W` attains its maximum, one per cluster.
    pub maximizers: Vec<usize>,
    /// `∫ √(2(c_H − W))` over each well, trapezoid rule on the grid.
    pub well_integrals: Vec<f64>,
    /// Switch fraction in the first well for each representative.
    pub params: Vec<f64>,
    /// Switch position (fraction of a cell past the node) per representative and well.
    pub switch_points: Vec<Vec<f64>>,
    pub representatives: Vec<GridField>,
    /// `|u(1) − u(0)|` closure error per representative.
    pub closure: Vec<f64>,
    /// Largest λ=0 scheme residual more than one node away from a kink.
    pub residual_off_kinks: Vec<f64>,
    pub degenerate: bool,
}

/// Build representatives of `u' = ±√(2(c_H − W))` with concave sign switches,
/// one switch per well, closing the loop over the torus.
pub fn oracle_solution_family(w: &HamiltonianSpec, grid: &PeriodicGrid, count: usize) -> Result<SolutionFamily1D> {
    if grid.dim() != 1 {
        return Err(Error::InvalidParameter {
            name: "grid",
            detail: "oracle family is one-dimensional".into(),
        });
    }
    let pot = w.potential();
    let n = grid.n_per_axis();
    let h = grid.spacing();
    let wv = pot.sample(grid);
    let c = pot.extrema(1).1.max(wv.max());
    let g: Vec<f64> = wv.values().iter().map(|&x| (2.0 * (c - x).max(0.0)).sqrt()).collect();
    if pot.is_constant() || g.iter().all(|&v| v == 0.0) {
        return Ok(SolutionFamily1D {
            c_h: c,
            maximizers: (0..n).collect(),
            well_integrals: vec![],
            params: vec![0.0],
            switch_points: vec![vec![]],
            representatives: vec![GridField::zeros(*grid)],
            closure: vec![0.0],
            residual_off_kinks: vec![0.0],
            degenerate: true,
        });
    }
    // Maximizer clusters: runs of nodes within tolerance of the max.
    let tol = 1e-12 * (1.0 + c.abs());
    let near: Vec<bool> = wv.values().iter().map(|&x| c - x <= tol.max(c - wv.max())).collect();
    let mut maximizers = Vec::new();
    for i in 0..n {
        if near[i] && !near[(i + n - 1) % n] {
            // Walk the run, keep its highest node.
            let mut best = i;
            let mut j = i;
            while near[j % n] && j < i + n {
                if wv[j % n] > wv[best] {
                    best = j % n;
                }
                j += 1;
            }
            maximizers.push(best);
        }
    }
    if maximizers.is_empty() {
        // Every node is a maximizer run without a start: W constant on the grid.
        maximizers.push(0);
    }
    maximizers.sort_unstable();
    let cell = |i: usize| 0.5 * h * (g[i % n] + g[(i + 1) % n]);
    let k = maximizers.len();
    let wells: Vec<(usize, usize)> = (0..k)
        .map(|j| {
            let a = maximizers[j];
            let b = if j + 1 < k { maximizers[j + 1] } else { maximizers[0] + n };
            (a, b)
        })
        .collect();
    let integrals: Vec<f64> = wells.iter().map(|&(a, b)| (a..b).map(cell).sum()).collect();
    let first = integrals[0];
    let rest: f64 = integrals[1..].iter().sum();
    // Σ(2t_k − 1)I_k = 0 with t_2 = ... = t_k = s.
    let (t_lo, t_hi) = if k == 1 {
        (0.5, 0.5)
    } else {
        let lo = (0.5 - rest / (2.0 * first)).max(0.0);
        let hi = (0.5 + rest / (2.0 * first)).min(1.0);
        (lo, hi)
    };
    let count = if k == 1 { 1 } else { count.max(2) };
    let params: Vec<f64> = (0..count)
        .map(|j| if count == 1 { t_lo } else { t_lo + (t_hi - t_lo) * j as f64 / (count - 1) as f64 })
        .collect();

    let base = ProblemSpec::new(
        w.clone(),
        crate::models::DiffusionSpec::zero(),
        DiscountSpec::Linear,
        PotentialSpec::zero(),
        c,
        *grid,
    );
    let mut reps = Vec::new();
    let mut switches = Vec::new();
    let mut closure = Vec::new();
    let mut off_kinks = Vec::new();
    for &t in &params {
        let s = if k == 1 { 0.5 } else { 0.5 - (2.0 * t - 1.0) * first / (2.0 * rest) };
        let mut u = vec![0.0; n];
        let mut acc = 0.0;
        let mut sw = Vec::new();
        let mut kink_nodes = Vec::new();
        let start = maximizers[0];
        for (j, &(a, b)) in wells.iter().enumerate() {
            let tk = if j == 0 { t } else { s };
            let budget = tk * integrals[j];
            let mut rise = 0.0;
            let mut switched = budget <= 0.0;
            if switched {
                sw.push(0.0);
            }
            for i in a..b {
                let ci = cell(i);
                let inc = if switched {
                    -ci
                } else if rise + ci <= budget && i + 1 < b {
                    rise += ci;
                    ci
                } else {
                    let r = (budget - rise).clamp(0.0, ci);
                    switched = true;
                    sw.push((i - a) as f64 + if ci > 0.0 { r / ci } else { 0.0 });
                    kink_nodes.push(i % n);
                    kink_nodes.push((i + 1) % n);
                    2.0 * r - ci
                };
                acc += inc;
                if (i + 1) % n != start {
                    u[(i + 1) % n] = acc;
                }
            }
        }
        closure.push(acc.abs());
        let field = GridField::from_values(*grid, u)?;
        let res = residual(&base, &field, 0.0, 0.0)?;
        let worst = (0..n)
            .filter(|i| {
                kink_nodes
                    .iter()
                    .all(|&kn| crate::grid::circle_distance(grid.point(*i)[0], grid.point(kn)[0]) > 1.5 * h)
            })
            .map(|i| res[i].abs())
            .fold(0.0, f64::max);
        off_kinks.push(worst);
        switches.push(sw);
        reps.push(field);
    }
    Ok(SolutionFamily1D {
        c_h: c,
        maximizers,
        well_integrals: integrals,
        params,
        switch_points: switches,
        representatives: reps,
        closure,
        residual_off_kinks: off_kinks,
        degenerate: false,
    })
}

/// Constants of the O(λ) bound `‖u_λ − û₀‖∞ ≤ Mλ`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct RateConstants {
    pub u0_sup: f64,
    /// `min ∂_r f` over `|r| ≤ ‖û₀‖∞ + 1`.
    pub d0: f64,
    /// Lipschitz constant of `∂_r f` on `|s| ≤ ‖û₀‖∞`.
    pub k0: f64,
    /// `K₀‖û₀‖²∞ / (2d₀)`
    pub m: f64,
}

pub fn rate_constants(discount: &DiscountSpec, dim: usize, u0_sup: f64) -> RateConstants {
    let d0 = discount.dr_f_range(dim, u0_sup + 1.0).0;
    let k0 = discount.dr_f_lipschitz(dim, u0_sup);
    RateConstants {
        u0_sup,
        d0,
        k0,
        m: k0 / (2.0 * d0) * u0_sup * u0_sup,
    }
}

/// `V̂₀ = −∂_r f(·, 0) û₀` on the grid.
pub fn matching_potential(discount: &DiscountSpec, u0: &GridField) -> PotentialSpec {
    let g = *u0.grid();
    let d = g.dim();
    let vals: Vec<f64> = (0..g.len())
        .map(|i| -discount.dr_f(&g.point(i)[..d], 0.0) * u0[i])
        .collect();
    PotentialSpec::sampled(GridField::from_values(g, vals).expect("finite potential"))
}

#[derive(Clone, Debug, Serialize)]
pub struct RateRow {
    pub lambda: f64,
    pub error: f64,
    /// `error − floor`, clamped at 0.
    pub excess: f64,
    /// `(M + floor/λ_min)·λ`
    pub bound: f64,
    pub within_bound: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct TheoremCReport {
    pub constants: RateConstants,
    pub rows: Vec<RateRow>,
    /// `‖u_λ − û₀‖∞` at `λ_min/64`: the resolution floor.
    pub floor: f64,
    pub floor_lambda: f64,
    /// Fit of the error against λ over points with `error > 2·floor`.
    /// `None` when fewer than three points clear the floor.
    pub fit: Option<RateFit>,
    pub fit_note: String,
    /// `floor / λ_min`, the scheme term added to `M`.
    pub m_scheme: f64,
    pub all_within_bound: bool,
    pub pairwise: Vec<f64>,
}

/// Solve with the matching potential along `lambda_seq` and measure the
/// distance to `û₀`.
pub fn theorem_c_harness(
    problem: &ProblemSpec,
    u0: &GridField,
    lambda_seq: &[f64],
    opts: &SolveOptions,
) -> Result<TheoremCReport> {
    check_sequence(lambda_seq, 3)?;
    if u0.grid() != &problem.grid {
        return Err(Error::IncompatibleGrid("û₀ and problem".into()));
    }
    let d = problem.grid.dim();
    let p = problem.clone().with_potential(matching_potential(&problem.discount, u0));
    let constants = rate_constants(&problem.discount, d, u0.sup_norm());
    let lambda_min = *lambda_seq.last().expect("nonempty");
    let floor_lambda = lambda_min / 64.0;
    let mut all: Vec<f64> = lambda_seq.to_vec();
    all.push(floor_lambda);
    let sols: Vec<SolveReport> = all
        .par_iter()
        .map(|&l| solve(&p, l, 0.0, opts))
        .collect::<Result<_>>()?;
    let errors: Vec<f64> = sols.iter().map(|s| s.u.sup_distance(u0).expect("same grid")).collect();
    let floor = errors[errors.len() - 1];
    let m_scheme = floor / lambda_min;
    let rows: Vec<RateRow> = lambda_seq
        .iter()
        .zip(&errors)
        .map(|(&lambda, &error)| {
            let bound = (constants.m + m_scheme) * lambda;
            RateRow {
                lambda,
                error,
                excess: (error - floor).max(0.0),
                bound,
                within_bound: error <= bound * (1.0 + 1e-12),
            }
        })
        .collect();
    // Subtracting the floor overcorrects: at large λ the error does not
    // depend on h at all. Points near the floor are dropped instead.
    let cutoff = (2.0 * floor).max(10.0 * opts.tol);
    let pairs: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.error > cutoff)
        .map(|r| (r.lambda, r.error))
        .collect();
    let (fit, fit_note) = match rate_fit(&pairs, opts.tol) {
        Ok(f) => (Some(f), format!("{} points above the floor", pairs.len())),
        Err(e) => (None, format!("no fit: {e}")),
    };
    let pairwise = sols[..lambda_seq.len()]
        .windows(2)
        .map(|w| w[0].u.sup_distance(&w[1].u).expect("same grid"))
        .collect();
    Ok(TheoremCReport {
        constants,
        all_within_bound: rows.iter().all(|r| r.within_bound),
        rows,
        floor,
        floor_lambda,
        fit,
        fit_note,
        m_scheme,
        pairwise,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    /// Hypothesis holds on every sampled measure and so does the conclusion.
    Verified,
    /// Hypothesis holds but the conclusion fails beyond slack.
    Violated,
    /// Hypothesis fails on some sampled measure; no conclusion is drawn.
    NoClaim,
}

#[derive(Clone, Debug, Serialize)]
pub struct TheoremBReport {
    /// `∫ (u₂ − u₁) σ dμ` per measure.
    pub hypothesis_margins: Vec<f64>,
    /// `min (u₂ − u₁)`
    pub conclusion_margin: f64,
    pub slack: f64,
    pub verdict: Verdict,
    /// Always "verified against sampled measures": the full measure set is not computable.
    pub scope: &'static str,
}

pub fn theorem_b_experiment(
    u1: &GridField,
    u2: &GridField,
    measures: &[&DiscreteMeasure],
    sigma: &GridField,
    slack: f64,
) -> Result<TheoremBReport> {
    u1.check_compatible(u2)?;
    u1.check_compatible(sigma)?;
    if sigma.min() <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "sigma",
            detail: "must be positive".into(),
        });
    }
    let diff = u2.sub(u1)?;
    let d = u1.grid().dim();
    let hypothesis_margins: Vec<f64> = measures
        .iter()
        .map(|m| m.integrate(|a| diff.interpolate(&a.x[..d]) * sigma.interpolate(&a.x[..d])))
        .collect();
    let conclusion_margin = diff.min();
    let verdict = if hypothesis_margins.iter().any(|&m| m < -slack) {
        Verdict::NoClaim
    } else if conclusion_margin >= -slack {
        Verdict::Verified
    } else {
        Verdict::Violated
    };
    Ok(TheoremBReport {
        hypothesis_margins,
        conclusion_margin,
        slack,
        verdict,
        scope: "verified against sampled measures",
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct UStar {
    pub u_star: GridField,
    /// Largest admissible shift per representative.
    pub shifts: Vec<f64>,
    /// Representative attaining the max at each node.
    pub argmax: Vec<usize>,
}

/// `sup { w + c : w in the sampled family, constraint ≤ 0 for every measure }`.
///
/// The constraint is affine in `c` with slope `∫ ∂_r f(·,0) dμ > 0`, so the
/// largest admissible shift per representative is explicit.
pub fn u_star_brute_force(
    family: &SolutionFamily1D,
    measures: &[&DiscreteMeasure],
    potential: &PotentialSpec,
    discount: &DiscountSpec,
) -> Result<UStar> {
    if measures.is_empty() {
        return Err(Error::EmptyClass("no measures to constrain the family".into()));
    }
    let reps = &family.representatives;
    let grid = *reps[0].grid();
    let shifts: Vec<f64> = reps
        .iter()
        .map(|w| {
            measures
                .iter()
                .map(|m| {
                    let f = constraint_functional(m, w, potential, discount);
                    let slope = m.integrate(|a| discount.dr_f(&a.x[..1], 0.0));
                    -f / slope
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    if shifts.iter().all(|c| !c.is_finite()) {
        return Err(Error::EmptyClass("no representative admits a finite shift".into()));
    }
    let mut u = vec![f64::NEG_INFINITY; grid.len()];
    let mut argmax = vec![0; grid.len()];
    for (k, (w, c)) in reps.iter().zip(&shifts).enumerate() {
        for i in 0..grid.len() {
            let v = w[i] + c;
            if v > u[i] {
                u[i] = v;
                argmax[i] = k;
            }
        }
    }
    Ok(UStar {
        u_star: GridField::from_values(grid, u)?,
        shifts,
        argmax,
    })
}
