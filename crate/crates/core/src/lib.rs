//! Weighted-target self-distillation of kernel ridge regression.
//!
//! * [`linalg`]: kernels, Gram matrices, eigendecomposition, SPD solves.
//! * [`krr`]: the two-target ridge fit each distillation step performs.
//! * [`distill`]: iterative chains, closed forms at any step, and the
//!   infinite-step limit.
//! * [`spectral`]: per-eigendirection shrinkage `B⁽ᵗ⁾` and its diagnostics.
//! * [`constrained`]: the loss-constrained variant with KKT multipliers.
//! * [`experiment`]: dataset generation, experiment runner, CSV and plot
//!   output used by the `selfdistill` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod constrained;
pub mod distill;
pub mod error;
pub mod experiment;
pub mod krr;
pub mod linalg;
pub mod spectral;

pub use error::{Error, Result};
