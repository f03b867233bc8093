//! Numerical laboratory for the vanishing-discount selection problem of
//! degenerate viscous Hamilton-Jacobi equations on the torus.
//!
//! The crate solves the perturbed discounted equation with a monotone
//! scheme, builds approximate Mather measures from the discrete adjoint,
//! regularizes subsolutions by inf-sup convolution, and runs the selection
//! and rate experiments on top of these pieces.

// Negated comparisons reject NaN parameters along with out-of-range ones.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod adjoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod fit;
pub mod grid;
pub mod io;
pub mod mather;
pub mod models;
pub mod regularize;
pub mod selection;
pub mod solver;
pub mod sparse;

pub use error::{Error, Result};
pub use grid::{GridField, PeriodicGrid};
pub use models::{DiffusionSpec, DiscountSpec, HamiltonianSpec, PotentialSpec, TrigSeries};
pub use solver::{ProblemSpec, SolveOptions, SolveReport};
