//! Tikhonov regularization with Bregman-distance penalties on uniform 1D grids,
//! iterated Bregman-Tikhonov reconstruction with discrepancy stopping, and a
//! harness for measuring convergence rates under source conditions.
//!
//! The numerical core is generic over the scalar type (see [`Real`]); the
//! aliases at the crate root fix it to `f64` or `f32`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod grid;
pub mod iteration;
pub mod operators;
pub mod penalty;
pub mod problems;
pub mod rates;
pub mod rng;
pub mod scalar;
pub mod solver;

pub use error::{Error, Result};
pub use grid::GridFunction;
pub use operators::{ForwardOperator, LinearMap, OperatorKind};
pub use penalty::Penalty;
pub use scalar::Real;

pub type Grid = GridFunction<f64>;
pub type Grid32 = GridFunction<f32>;
pub type Operator = ForwardOperator<f64>;
pub type Operator32 = ForwardOperator<f32>;
pub type PenaltyF64 = Penalty<f64>;
pub type PenaltyF32 = Penalty<f32>;
