//! Discrete adjoint of the linearized scheme.
//!
//! The density `σ` solves `Jᵀσ = b` with `J` the exact Jacobian of the
//! scheme at a converged solution and `b` a discrete Dirac of mass `λ`.
//! Because `J` is the actual discrete operator, the weak identity
//! `h^d ⟨σ, Jφ⟩ = λ φ(x₀)` holds to linear-solver precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{fourier_test_functions, integrate, GridField, PeriodicGrid};
use crate::solver::{jacobian, ProblemSpec};
use crate::sparse::{SkylineLu, SparseMatrix};

/// Largest off-diagonal entry tolerated before the scheme is declared broken.
pub const MONOTONICITY_TOL: f64 = 1e-13;

/// Jacobian at `u`, checked to be an M-matrix.
pub fn assemble_jacobian(
    problem: &ProblemSpec,
    u: &GridField,
    lambda: f64,
    eta: f64,
) -> Result<SparseMatrix> {
    let j = jacobian(problem, u, lambda, eta)?;
    if let Some((row, col, value)) = j.max_off_diagonal() {
        if value > MONOTONICITY_TOL {
            return Err(Error::MonotonicityViolation { row, col, value });
        }
    }
    for (i, d) in j.diagonal().into_iter().enumerate() {
        if !(d > 0.0) {
            return Err(Error::MonotonicityViolation {
                row: i,
                col: i,
                value: d,
            });
        }
    }
    Ok(j)
}

#[derive(Clone, Debug, Serialize)]
pub struct AdjointSolution {
    pub sigma: GridField,
    pub x0_index: usize,
    pub lambda: f64,
    pub eta: f64,
    /// `∫σ`.
    pub mass: f64,
    /// `∫ ∂_r f(x, λu) σ`, recovered from the row sums of `J`.
    pub weighted_mass: f64,
    /// `‖Jᵀσ − b‖∞`.
    pub linear_residual: f64,
}

/// A factorized Jacobian that can be shared across threads for many sources.
#[derive(Clone, Debug)]
pub struct AdjointOperator {
    pub jacobian: SparseMatrix,
    lu: SkylineLu,
    grid: PeriodicGrid,
    lambda: f64,
    eta: f64,
}

impl AdjointOperator {
    pub fn new(jacobian: SparseMatrix, grid: PeriodicGrid, lambda: f64, eta: f64) -> Result<Self> {
        if jacobian.n() != grid.len() {
            return Err(Error::IncompatibleGrid(format!(
                "operator of size {} on a grid with {} nodes",
                jacobian.n(),
                grid.len()
            )));
        }
        if !(lambda > 0.0) {
            return Err(Error::InvalidParameter {
                name: "lambda",
                detail: format!("adjoint needs lambda > 0, got {lambda}"),
            });
        }
        let lu = SkylineLu::factor(&jacobian)?;
        Ok(Self {
            jacobian,
            lu,
            grid,
            lambda,
            eta,
        })
    }

    /// Assemble and factor at a converged solution.
    pub fn at_solution(problem: &ProblemSpec, u: &GridField, lambda: f64, eta: f64) -> Result<Self> {
        Self::new(assemble_jacobian(problem, u, lambda, eta)?, problem.grid, lambda, eta)
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    /// `∂_r f(x_i, λu_i)` recovered as `(J𝟙)_i / λ`.
    pub fn discount_derivative(&self) -> GridField {
        GridField::from_raw(
            self.grid,
            self.jacobian.row_sums().into_iter().map(|s| s / self.lambda).collect(),
        )
    }

    /// Solve with a combination of Dirac sources `Σ c_k δ_{x_k}`, each of mass λ.
    pub fn solve_sources(&self, sources: &[(usize, f64)]) -> Result<AdjointSolution> {
        let g = self.grid;
        let mut b = vec![0.0; g.len()];
        let scale = self.lambda / g.cell_volume();
        for &(idx, c) in sources {
            if idx >= g.len() {
                return Err(Error::InvalidParameter {
                    name: "x0_index",
                    detail: format!("{idx} outside grid of {} nodes", g.len()),
                });
            }
            b[idx] += c * scale;
        }
        let mut s = self.lu.solve_transpose(&b);
        // One step of iterative refinement keeps the certificates at roundoff.
        let r0 = self.jacobian.mul_transpose_vec(&s);
        let corr: Vec<f64> = b.iter().zip(&r0).map(|(bi, ri)| bi - ri).collect();
        let ds = self.lu.solve_transpose(&corr);
        for (si, di) in s.iter_mut().zip(&ds) {
            *si += di;
        }
        let r = self.jacobian.mul_transpose_vec(&s);
        let linear_residual = r
            .iter()
            .zip(&b)
            .map(|(a, c)| (a - c).abs())
            .fold(0.0, f64::max);
        let sigma = GridField::from_raw(g, s);
        let min = sigma.min();
        if min < -1e-9 {
            return Err(Error::NegativityViolation(min));
        }
        let weighted = sigma.zip_with(&self.discount_derivative(), |a, d| a * d)?;
        Ok(AdjointSolution {
            mass: integrate(&sigma),
            weighted_mass: integrate(&weighted),
            sigma,
            x0_index: sources.first().map_or(0, |s| s.0),
            lambda: self.lambda,
            eta: self.eta,
            linear_residual,
        })
    }

    pub fn solve(&self, x0_index: usize) -> Result<AdjointSolution> {
        self.solve_sources(&[(x0_index, 1.0)])
    }
}

/// Solve `Jᵀσ = λ δ_{x₀} / h^d`.
pub fn solve_adjoint(
    j: &SparseMatrix,
    x0_index: usize,
    lambda: f64,
    eta: f64,
    grid: &PeriodicGrid,
) -> Result<AdjointSolution> {
    AdjointOperator::new(j.clone(), *grid, lambda, eta)?.solve(x0_index)
}

/// Mass bounds `m₀ = 1/max ∂_r f`, `m₁ = 1/min ∂_r f` over `|r| ≤ λ‖u‖∞`.
pub fn mass_bounds(problem: &ProblemSpec, lambda_u_sup: f64) -> (f64, f64) {
    let (lo, hi) = problem.discount.dr_f_range(problem.grid.dim(), lambda_u_sup);
    (1.0 / hi, 1.0 / lo)
}

#[derive(Clone, Debug, Serialize)]
pub struct DualityReport {
    /// `max_φ |h^d⟨σ, Jφ⟩ − λφ(x₀)|`.
    pub max_defect: f64,
    /// `max_φ ‖φ‖∞`.
    pub max_phi_norm: f64,
    pub trials: usize,
    pub pass: bool,
}

/// Pseudo-random smooth fields: random trigonometric polynomials of degree
/// at most 3 per axis, normalized to sup-norm 1.
pub fn random_smooth_fields(grid: &PeriodicGrid, count: usize, seed: u64) -> Vec<GridField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = grid.dim();
    (0..count)
        .map(|_| {
            let terms: Vec<(f64, [f64; 2], f64)> = (0..6)
                .map(|_| {
                    let k = [rng.random_range(0..=3) as f64, if d == 2 { rng.random_range(0..=3) as f64 } else { 0.0 }];
                    (rng.random_range(-1.0..1.0), k, rng.random_range(0.0..std::f64::consts::TAU))
                })
                .collect();
            let f = GridField::from_fn(*grid, |x| {
                terms
                    .iter()
                    .map(|(a, k, ph)| {
                        a * (std::f64::consts::TAU * (k[0] * x[0] + k[1] * x[1]) + ph).cos()
                    })
                    .sum()
            });
            let s = f.sup_norm();
            if s > 0.0 {
                f.scale(1.0 / s)
            } else {
                GridField::constant(*grid, 1.0)
            }
        })
        .collect()
}

/// Fourier test functions up to `max_mode` plus five seeded random fields.
pub fn default_trial_fields(grid: &PeriodicGrid, max_mode: usize, seed: u64) -> Result<Vec<GridField>> {
    let mut out: Vec<GridField> = fourier_test_functions(grid, max_mode)?
        .into_iter()
        .map(|t| t.phi)
        .collect();
    out.extend(random_smooth_fields(grid, 5, seed));
    Ok(out)
}

/// Check the discrete weak form against every trial field.
pub fn duality_certificate(
    adjoint: &AdjointSolution,
    j: &SparseMatrix,
    trial_fields: &[GridField],
) -> DualityReport {
    let g = *adjoint.sigma.grid();
    let mut max_defect: f64 = 0.0;
    let mut max_phi_norm: f64 = 0.0;
    for phi in trial_fields {
        let jphi = j.mul_vec(phi.values());
        let pairing: f64 = adjoint.sigma.values().iter().zip(&jphi).map(|(s, v)| s * v).sum();
        let defect = (g.cell_volume() * pairing - adjoint.lambda * phi[adjoint.x0_index]).abs();
        max_defect = max_defect.max(defect);
        max_phi_norm = max_phi_norm.max(phi.sup_norm());
    }
    DualityReport {
        max_defect,
        max_phi_norm,
        trials: trial_fields.len(),
        pass: max_defect <= 1e-9 * max_phi_norm.max(f64::MIN_POSITIVE),
    }
}
