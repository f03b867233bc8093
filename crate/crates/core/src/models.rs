//! Model catalogue: mechanical Hamiltonians, diagonal diffusions, discount
//! nonlinearities and potentials, with Legendre data and assumption checks.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridField, PeriodicGrid};
use crate::solver::ProblemSpec;

/// One term `amplitude · cos(2π k·x + phase)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CosineMode {
    pub amplitude: f64,
    /// Integer wave vector; missing trailing entries are zero.
    pub frequency: Vec<i32>,
    #[serde(default)]
    pub phase: f64,
}

impl CosineMode {
    fn k(&self, axis: usize) -> f64 {
        self.frequency.get(axis).copied().unwrap_or(0) as f64
    }

    fn argument(&self, x: &[f64]) -> f64 {
        let mut s = self.phase;
        for (axis, xi) in x.iter().enumerate() {
            s += 2.0 * PI * self.k(axis) * xi;
        }
        s
    }
}

/// Finite cosine series on the torus, evaluable with derivatives anywhere.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigSeries {
    #[serde(default)]
    pub offset: f64,
    #[serde(default)]
    pub modes: Vec<CosineMode>,
}

impl TrigSeries {
    pub fn constant(c: f64) -> Self {
        Self {
            offset: c,
            modes: Vec::new(),
        }
    }

    /// `amplitude · cos(2π k x_0)` on any dimension.
    pub fn cosine(amplitude: f64, k: i32) -> Self {
        Self {
            offset: 0.0,
            modes: vec![CosineMode {
                amplitude,
                frequency: vec![k],
                phase: 0.0,
            }],
        }
    }

    /// The built-in double well `cos 4πx`.
    pub fn cos4pi() -> Self {
        Self::cosine(1.0, 2)
    }

    pub fn plus(mut self, other: TrigSeries) -> Self {
        self.offset += other.offset;
        self.modes.extend(other.modes);
        self
    }

    pub fn is_constant(&self) -> bool {
        self.modes
            .iter()
            .all(|m| m.amplitude == 0.0 || m.frequency.iter().all(|&k| k == 0))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.offset
            + self
                .modes
                .iter()
                .map(|m| m.amplitude * m.argument(x).cos())
                .sum::<f64>()
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|axis| {
                self.modes
                    .iter()
                    .map(|m| -m.amplitude * 2.0 * PI * m.k(axis) * m.argument(x).sin())
                    .sum()
            })
            .collect()
    }

    /// Pure second derivative along `axis`.
    pub fn second_derivative(&self, x: &[f64], axis: usize) -> f64 {
        self.modes
            .iter()
            .map(|m| {
                let w = 2.0 * PI * m.k(axis);
                -m.amplitude * w * w * m.argument(x).cos()
            })
            .sum()
    }

    /// Largest frequency magnitude along any axis.
    pub fn max_frequency(&self) -> usize {
        self.modes
            .iter()
            .flat_map(|m| m.frequency.iter().map(|k| k.unsigned_abs() as usize))
            .max()
            .unwrap_or(0)
    }

    pub fn sample(&self, grid: &PeriodicGrid) -> GridField {
        let d = grid.dim();
        GridField::from_fn(*grid, |x| self.eval(&x[..d]))
    }

    /// `(min, max)` by dense sampling on an audit lattice.
    pub fn extrema(&self, dim: usize) -> (f64, f64) {
        let audit = audit_grid(dim, self.max_frequency());
        let s = self.sample(&audit);
        (s.min(), s.max())
    }

    /// `max |∇W|` by dense sampling.
    pub fn gradient_bound(&self, dim: usize) -> f64 {
        let audit = audit_grid(dim, self.max_frequency());
        (0..audit.len())
            .map(|i| {
                let x = audit.point(i);
                self.gradient(&x[..dim])
                    .iter()
                    .map(|g| g * g)
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }

    fn check_finite(&self, name: &'static str) -> Result<()> {
        let ok = self.offset.is_finite()
            && self
                .modes
                .iter()
                .all(|m| m.amplitude.is_finite() && m.phase.is_finite() && m.frequency.len() <= 2);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter {
                name,
                detail: "non-finite coefficient or frequency vector longer than 2".into(),
            })
        }
    }
}

/// Lattice used to audit closed-form coefficients. Resolution grows with the
/// highest frequency so that extrema are resolved to a few parts in 1e5.
pub fn audit_grid(dim: usize, max_frequency: usize) -> PeriodicGrid {
    let base = if dim == 1 { 4096 } else { 256 };
    let n = base.max(64 * max_frequency.next_power_of_two());
    PeriodicGrid::new(dim, n).expect("audit grid parameters are valid")
}

/// `H(x,p) = ½|p|² + W(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum HamiltonianSpec {
    Mechanical { potential: TrigSeries },
}

impl HamiltonianSpec {
    pub fn mechanical(potential: TrigSeries) -> Self {
        HamiltonianSpec::Mechanical { potential }
    }

    pub fn cos4pi() -> Self {
        Self::mechanical(TrigSeries::cos4pi())
    }

    pub fn free() -> Self {
        Self::mechanical(TrigSeries::constant(0.0))
    }

    pub fn potential(&self) -> &TrigSeries {
        match self {
            HamiltonianSpec::Mechanical { potential } => potential,
        }
    }

    pub fn w(&self, x: &[f64]) -> f64 {
        self.potential().eval(x)
    }

    pub fn dw(&self, x: &[f64]) -> Vec<f64> {
        self.potential().gradient(x)
    }

    pub fn eval_h(&self, x: &[f64], p: &[f64]) -> f64 {
        0.5 * p.iter().map(|v| v * v).sum::<f64>() + self.w(x)
    }

    pub fn legendre_l(&self, x: &[f64], v: &[f64]) -> f64 {
        0.5 * v.iter().map(|a| a * a).sum::<f64>() - self.w(x)
    }

    pub fn dp_h(&self, _x: &[f64], p: &[f64]) -> Vec<f64> {
        p.to_vec()
    }

    pub fn dv_l(&self, _x: &[f64], v: &[f64]) -> Vec<f64> {
        v.to_vec()
    }

    /// Smallest `γ₁` with `|D_xH| ≤ γ₁(1 + |H|)` for all `(x,p)`.
    ///
    /// For fixed x the right side is minimized over p at `|H| = max(W(x), 0)`.
    pub fn gamma1(&self, dim: usize) -> f64 {
        let w = self.potential();
        let audit = audit_grid(dim, w.max_frequency());
        (0..audit.len())
            .map(|i| {
                let x = audit.point(i);
                let g = w.gradient(&x[..dim]).iter().map(|v| v * v).sum::<f64>().sqrt();
                g / (1.0 + w.eval(&x[..dim]).max(0.0))
            })
            .fold(0.0, f64::max)
    }

    /// `γ₂ = 1 + 2|min H|`, with `min H = min W`.
    pub fn gamma2(&self, dim: usize) -> f64 {
        1.0 + 2.0 * self.potential().extrema(dim).0.abs()
    }
}

/// Discount nonlinearity `f(x, r)` with `f(x,0) = 0` and `∂_r f > 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DiscountSpec {
    /// `f = r`
    Linear,
    /// `f = σ(x) r`
    SpatialLinear { sigma: TrigSeries },
    /// `f = σ(x)(e^r − 1)`
    ExpSpatial { sigma: TrigSeries },
}

impl DiscountSpec {
    pub fn sigma(&self, x: &[f64]) -> f64 {
        match self {
            DiscountSpec::Linear => 1.0,
            DiscountSpec::SpatialLinear { sigma } | DiscountSpec::ExpSpatial { sigma } => {
                sigma.eval(x)
            }
        }
    }

    /// Values of σ on the grid (all ones for the linear family).
    pub fn sigma_field(&self, grid: &PeriodicGrid) -> GridField {
        match self {
            DiscountSpec::Linear => GridField::constant(*grid, 1.0),
            DiscountSpec::SpatialLinear { sigma } | DiscountSpec::ExpSpatial { sigma } => {
                sigma.sample(grid)
            }
        }
    }

    /// `f` given the precomputed `σ(x)`.
    #[inline]
    pub fn f_with_sigma(&self, s: f64, r: f64) -> f64 {
        match self {
            DiscountSpec::Linear => r,
            DiscountSpec::SpatialLinear { .. } => s * r,
            DiscountSpec::ExpSpatial { .. } => s * r.exp_m1(),
        }
    }

    /// `∂_r f` given the precomputed `σ(x)`.
    #[inline]
    pub fn dr_f_with_sigma(&self, s: f64, r: f64) -> f64 {
        match self {
            DiscountSpec::Linear => 1.0,
            DiscountSpec::SpatialLinear { .. } => s,
            DiscountSpec::ExpSpatial { .. } => s * r.exp(),
        }
    }

    /// Smallest `r` with `f(σ, r) ≥ y`; `−∞` if every r qualifies.
    pub fn f_inverse_with_sigma(&self, s: f64, y: f64) -> f64 {
        match self {
            DiscountSpec::Linear => y,
            DiscountSpec::SpatialLinear { .. } => y / s,
            DiscountSpec::ExpSpatial { .. } if y / s <= -1.0 => f64::NEG_INFINITY,
            DiscountSpec::ExpSpatial { .. } => (y / s).ln_1p(),
        }
    }

    pub fn f(&self, x: &[f64], r: f64) -> f64 {
        self.f_with_sigma(self.sigma(x), r)
    }

    pub fn dr_f(&self, x: &[f64], r: f64) -> f64 {
        self.dr_f_with_sigma(self.sigma(x), r)
    }

    fn sigma_extrema(&self, dim: usize) -> (f64, f64) {
        match self {
            DiscountSpec::Linear => (1.0, 1.0),
            DiscountSpec::SpatialLinear { sigma } | DiscountSpec::ExpSpatial { sigma } => {
                sigma.extrema(dim)
            }
        }
    }

    /// `(min, max)` of `∂_r f` over `T^n × [−R, R]`. Exact in r because
    /// `∂_r f` is monotone in r for every family.
    pub fn dr_f_range(&self, dim: usize, big_r: f64) -> (f64, f64) {
        let (lo, hi) = self.sigma_extrema(dim);
        match self {
            DiscountSpec::Linear => (1.0, 1.0),
            DiscountSpec::SpatialLinear { .. } => (lo, hi),
            DiscountSpec::ExpSpatial { .. } => (lo * (-big_r).exp(), hi * big_r.exp()),
        }
    }

    /// Lipschitz constant of `s ↦ ∂_r f(x,s)` on `|s| ≤ R`, uniform in x.
    pub fn dr_f_lipschitz(&self, dim: usize, big_r: f64) -> f64 {
        match self {
            DiscountSpec::Linear | DiscountSpec::SpatialLinear { .. } => 0.0,
            DiscountSpec::ExpSpatial { .. } => self.sigma_extrema(dim).1 * big_r.exp(),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            DiscountSpec::Linear => "linear",
            DiscountSpec::SpatialLinear { .. } => "spatial-linear",
            DiscountSpec::ExpSpatial { .. } => "exp-spatial",
        }
    }
}

/// Diffusion coefficient on a single axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AxisDiffusion {
    Zero,
    Constant { theta: f64 },
    /// `θ sin²(π k x_axis)`, vanishing on `k` hyperplanes.
    Degenerate { theta: f64, k: u32 },
}

impl AxisDiffusion {
    pub fn eval(&self, x_axis: f64) -> f64 {
        match *self {
            AxisDiffusion::Zero => 0.0,
            AxisDiffusion::Constant { theta } => theta,
            AxisDiffusion::Degenerate { theta, k } => theta * (PI * k as f64 * x_axis).sin().powi(2),
        }
    }
}

/// Diagonal diffusion `A(x) = diag(a_0(x), ..., a_{d-1}(x))`. A single entry
/// applies to every axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionSpec {
    pub axes: Vec<AxisDiffusion>,
}

impl DiffusionSpec {
    pub fn zero() -> Self {
        Self {
            axes: vec![AxisDiffusion::Zero],
        }
    }

    pub fn constant(theta: f64) -> Self {
        Self {
            axes: vec![AxisDiffusion::Constant { theta }],
        }
    }

    pub fn degenerate(theta: f64, k: u32) -> Self {
        Self {
            axes: vec![AxisDiffusion::Degenerate { theta, k }],
        }
    }

    pub fn axis(&self, axis: usize) -> &AxisDiffusion {
        if self.axes.len() == 1 {
            &self.axes[0]
        } else {
            &self.axes[axis]
        }
    }

    pub fn a(&self, axis: usize, x: &[f64]) -> f64 {
        self.axis(axis).eval(x[axis])
    }

    pub fn trace(&self, x: &[f64]) -> f64 {
        (0..x.len()).map(|axis| self.a(axis, x)).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.axes.iter().all(|a| match *a {
            AxisDiffusion::Zero => true,
            AxisDiffusion::Constant { theta } | AxisDiffusion::Degenerate { theta, .. } => {
                theta == 0.0
            }
        })
    }

    pub fn sample(&self, grid: &PeriodicGrid) -> Vec<GridField> {
        (0..grid.dim())
            .map(|axis| GridField::from_fn(*grid, |x| self.a(axis, &x)))
            .collect()
    }
}

/// Potential `V`: closed form, or grid samples with (bi)linear interpolation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PotentialSpec {
    Closed { series: TrigSeries },
    Sampled { field: GridField },
}

impl PotentialSpec {
    pub fn zero() -> Self {
        PotentialSpec::Closed {
            series: TrigSeries::constant(0.0),
        }
    }

    pub fn constant(c: f64) -> Self {
        PotentialSpec::Closed {
            series: TrigSeries::constant(c),
        }
    }

    pub fn closed(series: TrigSeries) -> Self {
        PotentialSpec::Closed { series }
    }

    pub fn sampled(field: GridField) -> Self {
        PotentialSpec::Sampled { field }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            PotentialSpec::Closed { series } => series.eval(x),
            PotentialSpec::Sampled { field } => field.interpolate(x),
        }
    }

    /// Values at the nodes of `grid`. Sampled potentials on the same grid are
    /// returned verbatim.
    pub fn sample(&self, grid: &PeriodicGrid) -> GridField {
        match self {
            PotentialSpec::Sampled { field } if field.grid() == grid => field.clone(),
            _ => {
                let d = grid.dim();
                GridField::from_fn(*grid, |x| self.eval(&x[..d]))
            }
        }
    }
}

/// Constants extracted by [`validate_assumptions`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    /// Discount range `R` the checks were run on.
    pub range: f64,
    /// `min ∂_r f` over `T^n × [−R, R]`.
    pub min_dr_f: f64,
    /// `max ∂_r f` over `T^n × [−R, R]`.
    pub max_dr_f: f64,
    pub max_abs_f0: f64,
    pub min_diffusion: f64,
    /// `min_x ∂_r f(x, 0)`.
    pub d0: f64,
    /// Lipschitz constant of `∂_r f` in r on `|r| ≤ R`.
    pub k0: f64,
    pub gamma1: f64,
    pub gamma2: f64,
}

/// Check the structural hypotheses on a problem over the discount range `R`.
pub fn validate_assumptions(problem: &ProblemSpec, big_r: f64) -> Result<ValidationReport> {
    if !(big_r.is_finite() && big_r >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "R",
            detail: format!("must be finite and nonnegative, got {big_r}"),
        });
    }
    let dim = problem.grid.dim();
    problem.hamiltonian.potential().check_finite("hamiltonian.potential")?;
    if let PotentialSpec::Closed { series } = &problem.potential {
        series.check_finite("potential")?;
    }
    if let PotentialSpec::Sampled { field } = &problem.potential {
        if field.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::AssumptionViolation {
                clause: "finite potential",
                detail: "sampled potential has non-finite entries".into(),
            });
        }
    }
    if !problem.c_h.is_finite() {
        return Err(Error::AssumptionViolation {
            clause: "finite ergodic constant",
            detail: format!("c_H = {}", problem.c_h),
        });
    }

    let discount = &problem.discount;
    let audit_freq = match discount {
        DiscountSpec::Linear => 0,
        DiscountSpec::SpatialLinear { sigma } | DiscountSpec::ExpSpatial { sigma } => {
            sigma.check_finite("discount.sigma")?;
            sigma.max_frequency()
        }
    };
    let audit = audit_grid(dim, audit_freq);
    let sigma = discount.sigma_field(&audit);
    if sigma.min() <= 0.0 {
        return Err(Error::AssumptionViolation {
            clause: "positive discount derivative",
            detail: format!("sigma reaches {:.6e} on the audit grid", sigma.min()),
        });
    }
    let max_abs_f0 = sigma
        .values()
        .iter()
        .map(|&s| discount.f_with_sigma(s, 0.0).abs())
        .fold(0.0, f64::max);
    if max_abs_f0 > 1e-14 {
        return Err(Error::AssumptionViolation {
            clause: "f(x,0) = 0",
            detail: format!("max |f(x,0)| = {max_abs_f0:.3e}"),
        });
    }
    let (min_dr_f, max_dr_f) = discount.dr_f_range(dim, big_r);
    if min_dr_f <= 0.0 {
        return Err(Error::AssumptionViolation {
            clause: "positive discount derivative",
            detail: format!("min d_r f = {min_dr_f:.6e} on |r| <= {big_r}"),
        });
    }
    let (d0, _) = discount.dr_f_range(dim, 0.0);

    let mut min_diffusion = f64::INFINITY;
    for axis in 0..dim {
        match problem.diffusion.axis(axis) {
            AxisDiffusion::Constant { theta } | AxisDiffusion::Degenerate { theta, .. }
                if !theta.is_finite() =>
            {
                return Err(Error::AssumptionViolation {
                    clause: "nonnegative diffusion",
                    detail: format!("non-finite theta on axis {axis}"),
                })
            }
            _ => {}
        }
        let a_audit = audit_grid(1, 8);
        for i in 0..a_audit.len() {
            min_diffusion = min_diffusion.min(problem.diffusion.axis(axis).eval(a_audit.point(i)[0]));
        }
    }
    if problem.diffusion.axes.len() != 1 && problem.diffusion.axes.len() != dim {
        return Err(Error::AssumptionViolation {
            clause: "diagonal diffusion",
            detail: format!(
                "{} axis entries for a {dim}-dimensional problem",
                problem.diffusion.axes.len()
            ),
        });
    }
    if min_diffusion < 0.0 {
        return Err(Error::AssumptionViolation {
            clause: "nonnegative diffusion",
            detail: format!("min a = {min_diffusion:.6e}"),
        });
    }

    Ok(ValidationReport {
        range: big_r,
        min_dr_f,
        max_dr_f,
        max_abs_f0,
        min_diffusion,
        d0,
        k0: discount.dr_f_lipschitz(dim, big_r),
        gamma1: problem.hamiltonian.gamma1(dim),
        gamma2: problem.hamiltonian.gamma2(dim),
    })
}
