//! Approximate generalized Mather measures built from `(u, σ)` pairs.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjoint::AdjointOperator;
use crate::error::{Error, Result};
use crate::grid::{forward_backward_differences, GridField, PeriodicGrid, Point};
use crate::models::{DiscountSpec, PotentialSpec};
use crate::solver::{solve, ProblemSpec, SolveOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Representation {
    /// Measure on `(x, p)`.
    Hamiltonian,
    /// Measure on `(x, v)`.
    Lagrangian,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub x: Point,
    pub p: [f64; 2],
    pub v: [f64; 2],
    pub w: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    pub dim: usize,
    pub atoms: Vec<Atom>,
    pub representation: Representation,
}

impl DiscreteMeasure {
    /// Normalize nonnegative weights. Fails if the total is not positive.
    pub fn new(dim: usize, mut atoms: Vec<Atom>, representation: Representation) -> Result<Self> {
        let total: f64 = atoms.iter().map(|a| a.w.max(0.0)).sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::Unnormalizable(total));
        }
        for a in &mut atoms {
            a.w = a.w.max(0.0) / total;
        }
        Ok(Self {
            dim,
            atoms,
            representation,
        })
    }

    pub fn total_weight(&self) -> f64 {
        self.atoms.iter().map(|a| a.w).sum()
    }

    /// `Σ w_i ψ(atom_i)`.
    pub fn integrate(&self, mut psi: impl FnMut(&Atom) -> f64) -> f64 {
        self.atoms.iter().map(|a| a.w * psi(a)).sum()
    }

    /// Weight within torus distance `radius` of any of `centres`.
    pub fn weight_near(&self, centres: &[Point], radius: f64) -> f64 {
        let d = self.dim;
        self.integrate(|a| {
            let near = centres
                .iter()
                .any(|c| crate::grid::torus_distance(d, &a.x[..d], &c[..d]) <= radius);
            if near {
                1.0
            } else {
                0.0
            }
        })
    }

    /// `½ Σ |w_i − w'_i|` for measures on the same atom positions.
    pub fn total_variation(&self, other: &DiscreteMeasure) -> Result<f64> {
        if self.atoms.len() != other.atoms.len()
            || self.atoms.iter().zip(&other.atoms).any(|(a, b)| a.x != b.x)
        {
            return Err(Error::IncompatibleGrid("measures on different atom sets".into()));
        }
        Ok(0.5
            * self
                .atoms
                .iter()
                .zip(&other.atoms)
                .map(|(a, b)| (a.w - b.w).abs())
                .sum::<f64>())
    }
}

/// Gradient used by the scheme at node `i` on one axis.
fn scheme_gradient(dm: f64, dp: f64) -> f64 {
    let minus_active = dm > 0.0;
    let plus_active = dp < 0.0;
    match (minus_active, plus_active) {
        (true, false) => dm,
        (false, true) => dp,
        _ => 0.5 * (dm + dp),
    }
}

/// One atom per node with weight `σ_i / Σσ` at the scheme-consistent gradient.
pub fn build_measure(u: &GridField, sigma: &GridField, problem: &ProblemSpec) -> Result<DiscreteMeasure> {
    u.check_compatible(sigma)?;
    let g = *u.grid();
    let total: f64 = sigma.values().iter().sum();
    if !(total > 0.0) {
        return Err(Error::Unnormalizable(total));
    }
    let diffs: Vec<(GridField, GridField)> = (0..g.dim())
        .map(|axis| forward_backward_differences(u, axis))
        .collect::<Result<_>>()?;
    let h = &problem.hamiltonian;
    let atoms = (0..g.len())
        .map(|i| {
            let x = g.point(i);
            let mut p = [0.0; 2];
            for (axis, (dm, dp)) in diffs.iter().enumerate() {
                p[axis] = scheme_gradient(dm[i], dp[i]);
            }
            let mut v = [0.0; 2];
            v[..g.dim()].copy_from_slice(&h.dp_h(&x[..g.dim()], &p[..g.dim()]));
            Atom {
                x,
                p,
                v,
                w: sigma[i],
            }
        })
        .collect();
    DiscreteMeasure::new(g.dim(), atoms, Representation::Hamiltonian)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    ToLagrangian,
    ToHamiltonian,
}

/// Move between `(x, p)` and `(x, v)` through the Legendre maps.
pub fn pushforward(measure: &DiscreteMeasure, problem: &ProblemSpec, direction: Direction) -> DiscreteMeasure {
    let d = measure.dim;
    let h = &problem.hamiltonian;
    let atoms = measure
        .atoms
        .iter()
        .map(|a| {
            let mut out = *a;
            match direction {
                Direction::ToLagrangian => out.v[..d].copy_from_slice(&h.dp_h(&a.x[..d], &a.p[..d])),
                Direction::ToHamiltonian => out.p[..d].copy_from_slice(&h.dv_l(&a.x[..d], &a.v[..d])),
            }
            out
        })
        .collect();
    DiscreteMeasure {
        dim: d,
        atoms,
        representation: match direction {
            Direction::ToLagrangian => Representation::Lagrangian,
            Direction::ToHamiltonian => Representation::Hamiltonian,
        },
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ActionDefect {
    /// `|Σ w (D_pH·p − H) + c_H|`.
    pub defect: f64,
    /// `|Σ w L(x, v) + c_H|`.
    pub lagrangian_defect: f64,
    /// Largest per-atom `|p·v − H − L|`.
    pub max_fenchel_gap: f64,
}

pub fn action_defect(measure: &DiscreteMeasure, problem: &ProblemSpec, c_h: f64) -> Result<ActionDefect> {
    let d = measure.dim;
    let h = &problem.hamiltonian;
    let mut ham = 0.0;
    let mut lag = 0.0;
    let mut gap: f64 = 0.0;
    for a in &measure.atoms {
        let (x, p, v) = (&a.x[..d], &a.p[..d], &a.v[..d]);
        let dph = h.dp_h(x, p);
        let pv: f64 = dph.iter().zip(p).map(|(s, t)| s * t).sum();
        let hv = h.eval_h(x, p);
        let lv = h.legendre_l(x, v);
        let fenchel: f64 = p.iter().zip(v).map(|(s, t)| s * t).sum::<f64>() - hv;
        gap = gap.max((fenchel - lv).abs() / (1.0 + lv.abs()));
        ham += a.w * (pv - hv);
        lag += a.w * lv;
    }
    let out = ActionDefect {
        defect: (ham + c_h).abs(),
        lagrangian_defect: (lag + c_h).abs(),
        max_fenchel_gap: gap,
    };
    if gap > 1e-12 {
        return Err(Error::Certificate(format!(
            "Fenchel equality fails per atom: relative gap {gap:.3e}"
        )));
    }
    Ok(out)
}

/// Test function value, gradient and Hessian diagonal at a point.
type Probe = (f64, [f64; 2], [f64; 2]);

fn wave(kind: usize, k: usize, t: f64) -> (f64, f64, f64) {
    let w = 2.0 * PI * k as f64;
    let (s, c) = (w * t).sin_cos();
    if kind == 0 {
        (s, w * c, -w * w * s)
    } else {
        (c, -w * s, -w * w * c)
    }
}

type ProbeFn = Box<dyn Fn(&[f64]) -> Probe + Send + Sync>;

/// The same modes as `fourier_test_functions`, evaluated at arbitrary points.
fn probes(dim: usize, max_mode: usize) -> Vec<ProbeFn> {
    let mut out: Vec<ProbeFn> = Vec::new();
    for axis in 0..dim {
        for k in 1..=max_mode {
            for kind in 0..2 {
                out.push(Box::new(move |x: &[f64]| {
                    let (v, d, dd) = wave(kind, k, x[axis]);
                    let mut g = [0.0; 2];
                    let mut hd = [0.0; 2];
                    g[axis] = d;
                    hd[axis] = dd;
                    (v, g, hd)
                }));
            }
        }
    }
    if dim == 2 {
        for k in 1..=max_mode {
            for l in 1..=max_mode {
                for ka in 0..2 {
                    for kb in 0..2 {
                        out.push(Box::new(move |x: &[f64]| {
                            let (a, da, dda) = wave(ka, k, x[0]);
                            let (b, db, ddb) = wave(kb, l, x[1]);
                            (a * b, [da * b, a * db], [dda * b, a * ddb])
                        }));
                    }
                }
            }
        }
    }
    out
}

/// `max_φ |Σ w (D_pH·Dφ − Σ a D²φ)|` over sup-normalized Fourier modes.
pub fn holonomy_defect(measure: &DiscreteMeasure, problem: &ProblemSpec, max_mode: usize) -> Result<f64> {
    let limit = problem.grid.n_per_axis() / 2;
    if max_mode == 0 || max_mode >= limit {
        return Err(Error::Aliasing { max_mode, limit });
    }
    let d = measure.dim;
    let h = &problem.hamiltonian;
    let drift: Vec<(Vec<f64>, [f64; 2])> = measure
        .atoms
        .iter()
        .map(|a| {
            let mut diff = [0.0; 2];
            for (axis, slot) in diff.iter_mut().enumerate().take(d) {
                *slot = problem.diffusion.a(axis, &a.x[..d]);
            }
            (h.dp_h(&a.x[..d], &a.p[..d]), diff)
        })
        .collect();
    Ok(probes(d, max_mode)
        .iter()
        .map(|phi| {
            measure
                .atoms
                .iter()
                .zip(&drift)
                .map(|(a, (b, diff))| {
                    let (_, grad, hess) = phi(&a.x[..d]);
                    let mut s = 0.0;
                    for axis in 0..d {
                        s += b[axis] * grad[axis] - diff[axis] * hess[axis];
                    }
                    a.w * s
                })
                .sum::<f64>()
                .abs()
        })
        .fold(0.0, f64::max))
}

/// `Σ w_i [∂_r f(x_i, 0) w(x_i) + V(x_i)]`; nonpositive when the constraint holds.
pub fn constraint_functional(
    measure: &DiscreteMeasure,
    w: &GridField,
    potential: &PotentialSpec,
    discount: &DiscountSpec,
) -> f64 {
    let d = measure.dim;
    measure.integrate(|a| {
        let x = &a.x[..d];
        discount.dr_f(x, 0.0) * w.interpolate(x) + potential.eval(x)
    })
}

/// Coupling of the viscosity to the discount along a measure path.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EtaRule {
    Zero,
    /// `η = λ²`
    #[default]
    Square,
    Fixed {
        eta: f64,
    },
}

impl EtaRule {
    pub fn eta(&self, lambda: f64) -> f64 {
        match *self {
            EtaRule::Zero => 0.0,
            EtaRule::Square => lambda * lambda,
            EtaRule::Fixed { eta } => eta,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MeasureEntry {
    pub x0_index: usize,
    pub x0: Point,
    pub lambda: f64,
    pub eta: f64,
    pub measure: DiscreteMeasure,
    pub action: ActionDefect,
    pub holonomy: f64,
    pub mass: f64,
    pub weighted_mass: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MeasureFamily {
    pub lambdas: Vec<f64>,
    /// Entries ordered by x₀, then by position in the λ sequence.
    pub entries: Vec<MeasureEntry>,
    /// Per x₀: total-variation distances between successive λ.
    pub tv_distances: Vec<Vec<f64>>,
    pub max_mode: usize,
}

impl MeasureFamily {
    /// Measures at the smallest λ, one per x₀.
    pub fn final_measures(&self) -> Vec<&MeasureEntry> {
        let m = self.lambdas.len();
        self.entries.chunks(m).map(|c| &c[m - 1]).collect()
    }
}

/// Solve at every λ, then build one measure per `(x₀, λ)`.
pub fn measure_family(
    problem: &ProblemSpec,
    lambda_seq: &[f64],
    eta_rule: EtaRule,
    x0_list: &[Point],
    max_mode: usize,
    opts: &SolveOptions,
) -> Result<MeasureFamily> {
    if lambda_seq.is_empty() || lambda_seq.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidParameter {
            name: "lambda_seq",
            detail: "must be nonempty and strictly decreasing".into(),
        });
    }
    if x0_list.is_empty() {
        return Err(Error::InvalidParameter {
            name: "x0_list",
            detail: "must be nonempty".into(),
        });
    }
    let g: PeriodicGrid = problem.grid;
    let ops: Vec<(AdjointOperator, GridField)> = lambda_seq
        .par_iter()
        .map(|&lambda| {
            let eta = eta_rule.eta(lambda);
            let rep = solve(problem, lambda, eta, opts)?;
            Ok((AdjointOperator::at_solution(problem, &rep.u, lambda, eta)?, rep.u))
        })
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..x0_list.len())
        .flat_map(|k| (0..lambda_seq.len()).map(move |j| (k, j)))
        .collect();
    let entries: Vec<MeasureEntry> = jobs
        .par_iter()
        .map(|&(k, j)| {
            let (op, u) = &ops[j];
            let idx = g.nearest_node(&x0_list[k][..g.dim()]);
            let adj = op.solve(idx)?;
            let measure = build_measure(u, &adj.sigma, problem)?;
            Ok(MeasureEntry {
                x0_index: idx,
                x0: g.point(idx),
                lambda: lambda_seq[j],
                eta: eta_rule.eta(lambda_seq[j]),
                action: action_defect(&measure, problem, problem.c_h)?,
                holonomy: holonomy_defect(&measure, problem, max_mode)?,
                mass: adj.mass,
                weighted_mass: adj.weighted_mass,
                measure,
            })
        })
        .collect::<Result<_>>()?;
    let tv_distances = entries
        .chunks(lambda_seq.len())
        .map(|c| {
            c.windows(2)
                .map(|w| w[0].measure.total_variation(&w[1].measure))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok(MeasureFamily {
        lambdas: lambda_seq.to_vec(),
        entries,
        tv_distances,
        max_mode,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adjoint::solve_adjoint;
    use crate::models::{DiffusionSpec, HamiltonianSpec};
    use crate::solver::jacobian;
    use proptest::prelude::*;

    #[test]
    fn dirac_and_uniform_measures() {
        let g = PeriodicGrid::one_d(64).unwrap();
        let p = ProblemSpec::trivial(g);
        let u = GridField::zeros(g);
        let j = jacobian(&p, &u, 0.1, 0.0).unwrap();
        let sigma = solve_adjoint(&j, 9, 0.1, 0.0, &g).unwrap().sigma;
        let m = build_measure(&u, &sigma, &p).unwrap();
        let heavy: Vec<&Atom> = m.atoms.iter().filter(|a| a.w > 0.0).collect();
        assert_eq!(heavy.len(), 1);
        assert_eq!(heavy[0].x, g.point(9));
        assert_eq!((heavy[0].p, heavy[0].v, heavy[0].w), ([0.0; 2], [0.0; 2], 1.0));

        let m = build_measure(&u, &GridField::constant(g, 1.0), &p).unwrap();
        assert!(m.atoms.iter().all(|a| a.w == 1.0 / 64.0 && a.p == [0.0; 2]));
        assert!((m.total_weight() - 1.0).abs() < 1e-12);
        assert!(build_measure(&u, &GridField::zeros(g), &p).is_err());
    }

    #[test]
    fn gradient_branches() {
        assert_eq!(scheme_gradient(1.0, 2.0), 1.0);
        assert_eq!(scheme_gradient(-1.0, -2.0), -2.0);
        assert_eq!(scheme_gradient(1.0, -1.0), 0.0);
        assert_eq!(scheme_gradient(-1.0, 3.0), 1.0);
    }

    #[test]
    fn pushforward_single_atom() {
        let g = PeriodicGrid::one_d(16).unwrap();
        let p = ProblemSpec::cos4pi(g);
        let m = DiscreteMeasure::new(
            1,
            vec![Atom {
                x: [0.3, 0.0],
                p: [2.0, 0.0],
                v: [0.0, 0.0],
                w: 1.0,
            }],
            Representation::Hamiltonian,
        )
        .unwrap();
        let l = pushforward(&m, &p, Direction::ToLagrangian);
        assert_eq!(l.atoms[0].v, [2.0, 0.0]);
        assert_eq!(l.representation, Representation::Lagrangian);
        let back = pushforward(&l, &p, Direction::ToHamiltonian);
        assert_eq!(back.atoms, l.atoms);
    }

    #[test]
    fn action_defect_examples() {
        let g = PeriodicGrid::one_d(16).unwrap();
        let atom = |x: f64| Atom {
            x: [x, 0.0],
            p: [0.0; 2],
            v: [0.0; 2],
            w: 1.0,
        };
        let m = DiscreteMeasure::new(1, vec![atom(0.37)], Representation::Hamiltonian).unwrap();
        let d = action_defect(&m, &ProblemSpec::trivial(g), 0.0).unwrap();
        assert_eq!(d.defect, 0.0);
        let m = DiscreteMeasure::new(1, vec![atom(0.0)], Representation::Hamiltonian).unwrap();
        let d = action_defect(&m, &ProblemSpec::cos4pi(g), 1.0).unwrap();
        assert!(d.defect < 1e-15 && d.lagrangian_defect < 1e-15);
    }

    #[test]
    fn holonomy_examples() {
        let g = PeriodicGrid::one_d(64).unwrap();
        let p = ProblemSpec::cos4pi(g);
        let m = DiscreteMeasure::new(
            1,
            vec![Atom {
                x: [0.123, 0.0],
                p: [0.0; 2],
                v: [0.0; 2],
                w: 1.0,
            }],
            Representation::Hamiltonian,
        )
        .unwrap();
        assert_eq!(holonomy_defect(&m, &p, 4).unwrap(), 0.0);
        let atoms = (0..64)
            .map(|i| Atom {
                x: g.point(i),
                p: [0.7, 0.0],
                v: [0.7, 0.0],
                w: 1.0,
            })
            .collect();
        let m = DiscreteMeasure::new(1, atoms, Representation::Hamiltonian).unwrap();
        assert!(holonomy_defect(&m, &p, 5).unwrap() < 1e-12);
        assert!(holonomy_defect(&m, &p, 32).is_err());

        let g2 = PeriodicGrid::two_d(16).unwrap();
        let p2 = ProblemSpec::cos4pi(g2);
        let atoms = (0..g2.len())
            .map(|i| Atom {
                x: g2.point(i),
                p: [0.3, -0.2],
                v: [0.3, -0.2],
                w: 1.0,
            })
            .collect();
        let m = DiscreteMeasure::new(2, atoms, Representation::Hamiltonian).unwrap();
        assert!(holonomy_defect(&m, &p2, 3).unwrap() < 1e-12);
    }

    #[test]
    fn constraint_examples() {
        let g = PeriodicGrid::one_d(32).unwrap();
        let atoms: Vec<Atom> = (0..32)
            .map(|i| Atom {
                x: g.point(i),
                p: [0.0; 2],
                v: [0.0; 2],
                w: (i % 5) as f64 + 0.5,
            })
            .collect();
        let m = DiscreteMeasure::new(1, atoms, Representation::Hamiltonian).unwrap();
        let lin = DiscountSpec::Linear;
        assert_eq!(constraint_functional(&m, &GridField::zeros(g), &PotentialSpec::zero(), &lin), 0.0);
        let c = constraint_functional(&m, &GridField::constant(g, -1.0), &PotentialSpec::constant(1.0), &lin);
        assert!(c.abs() < 1e-15);
        let sigma = crate::models::TrigSeries::constant(1.5).plus(crate::models::TrigSeries::cosine(0.5, 1));
        let exp = DiscountSpec::ExpSpatial { sigma };
        let u0 = GridField::from_fn(g, |x| (1.0 - (2.0 * PI * x[0]).cos()) / PI);
        let v0 = GridField::from_fn(g, |x| -exp.dr_f(&x[..1], 0.0) * u0.interpolate(&x[..1]));
        let c = constraint_functional(&m, &u0, &PotentialSpec::sampled(v0), &exp);
        assert!(c.abs() < 1e-12);
    }

    #[test]
    fn cos4pi_family_concentrates() {
        let g = PeriodicGrid::one_d(256).unwrap();
        let p = ProblemSpec::cos4pi(g);
        let fam = measure_family(
            &p,
            &[0.04, 0.02, 0.01],
            EtaRule::Square,
            &[[0.0, 0.0], [0.25, 0.0], [0.5, 0.0]],
            3,
            &SolveOptions::default(),
        )
        .unwrap();
        assert_eq!(fam.entries.len(), 9);
        for e in fam.final_measures() {
            assert!((e.measure.total_weight() - 1.0).abs() < 1e-12);
            assert!((e.weighted_mass - 1.0).abs() < 1e-9);
            assert!(e.measure.weight_near(&[[0.0, 0.0], [0.5, 0.0]], 0.05) > 0.9);
            assert!(e.action.defect < 0.2 && e.holonomy < 0.5);
        }
    }

    #[test]
    fn free_hamiltonian_measures_have_zero_momentum() {
        let g = PeriodicGrid::one_d(64).unwrap();
        let p = ProblemSpec::trivial(g).with_diffusion(DiffusionSpec::constant(0.05));
        let fam = measure_family(&p, &[0.1, 0.05], EtaRule::Zero, &[[0.2, 0.0]], 2, &SolveOptions::default()).unwrap();
        for e in &fam.entries {
            assert!(e.measure.atoms.iter().all(|a| a.p == [0.0; 2]));
        }
        assert_eq!(p.hamiltonian, HamiltonianSpec::free());
    }

    proptest! {
        #[test]
        fn lagrangian_change_of_variables(ws in prop::collection::vec(0.01f64..1.0, 1..20), ps in prop::collection::vec(-3.0f64..3.0, 20)) {
            let g = PeriodicGrid::one_d(32).unwrap();
            let prob = ProblemSpec::cos4pi(g);
            let atoms = ws.iter().zip(&ps).enumerate().map(|(i, (&w, &p))| Atom {
                x: g.point(i), p: [p, 0.0], v: [0.0; 2], w,
            }).collect();
            let m = DiscreteMeasure::new(1, atoms, Representation::Hamiltonian).unwrap();
            prop_assert!((m.total_weight() - 1.0).abs() < 1e-12);
            let l = pushforward(&m, &prob, Direction::ToLagrangian);
            let lhs = l.integrate(|a| a.v[0] * a.v[0]);
            let rhs = m.integrate(|a| prob.hamiltonian.dp_h(&a.x[..1], &a.p[..1])[0].powi(2));
            prop_assert!((lhs - rhs).abs() < 1e-12);
            prop_assert_eq!(pushforward(&l, &prob, Direction::ToHamiltonian).atoms, l.atoms.clone());
            prop_assert!(action_defect(&l, &prob, 1.0).unwrap().max_fenchel_gap <= 1e-12);
        }
    }
}
