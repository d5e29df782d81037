//! Contraction analysis for semi-explicit index-1 DAEs with quadratic
//! right-hand sides: matrix measures, virtual extended Jacobians, inner
//! approximations of the contraction region, and simulation checks.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod builtin;
pub mod dae;
pub mod ensemble;
pub mod error;
pub mod extension;
pub mod linops;
pub mod powersys;
pub mod region;
pub mod simulator;

pub use dae::{CoefficientDecomposition, JacobianBlocks, QuadraticDae};
pub use error::{Error, Result};
pub use linops::NormOrder;
