use thiserror::Error;

use crate::grid::GridField;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("incompatible grids: {0}")]
    IncompatibleGrid(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("axis {axis} out of range for a {dim}-dimensional grid")]
    AxisOutOfRange { axis: usize, dim: usize },

    #[error("negative diffusion coefficient {value} on axis {axis} at node {node}")]
    NegativeDiffusion { axis: usize, node: usize, value: f64 },

    #[error("aliasing: max_mode {max_mode} must be below n_per_axis/2 = {limit}")]
    Aliasing { max_mode: usize, limit: usize },

    #[error("assumption violated ({clause}): {detail}")]
    AssumptionViolation { clause: &'static str, detail: String },

    #[error("invalid parameter {name}: {detail}")]
    InvalidParameter { name: &'static str, detail: String },

    #[error("discount {lambda} exceeds the configured ceiling {ceiling}")]
    LambdaCeiling { lambda: f64, ceiling: f64 },

    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        best: BestIterate,
    },

    #[error("monotonicity violated: off-diagonal entry {value:.3e} at ({row}, {col})")]
    MonotonicityViolation { row: usize, col: usize, value: f64 },

    #[error("singular linear system: zero pivot at row {0}")]
    SingularSystem(usize),

    #[error("adjoint density negative: min sigma = {0:.3e}")]
    NegativityViolation(f64),

    #[error("measure cannot be normalized: total weight {0:.3e}")]
    Unnormalizable(f64),

    #[error("periodic tiling insufficient for epsilon = {0}")]
    PeriodInsufficiency(f64),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("empty admissible class: {0}")]
    EmptyClass(String),

    #[error("family degenerate: {0}")]
    FamilyDegenerate(String),

    #[error("sweep failed: {failed} of {total} rows did not converge")]
    SweepFailed { failed: usize, total: usize },

    #[error("config error at {field}: {detail}")]
    Config { field: String, detail: String },

    #[error("certificate violated: {0}")]
    Certificate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Last good iterate of a failed solve. Its `Debug` output is a summary so
/// that error messages stay readable.
#[derive(Clone, PartialEq)]
pub struct BestIterate(pub Box<GridField>);

impl std::fmt::Debug for BestIterate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "GridField({:?}, sup {:.3e})", self.0.grid(), self.0.sup_norm())
    }
}

impl std::ops::Deref for BestIterate {
    type Target = GridField;
    fn deref(&self) -> &GridField {
        &self.0
    }
}

pub type Result<T> = std::result::Result<T, Error>;
