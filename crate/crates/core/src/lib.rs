//! Nonradial solutions of the Schrödinger–Poisson system
//!
//! ```text
//! −Δu + qφu = g(u),   −Δφ = q u²   in ℝ³
//! ```
//!
//! found by minimizing `J_q(u) = ½∫|∇u|² + (q/4)∫φ_u u²` over
//! `M = {∫G(u) = 1}` among cylindrically symmetric fields that are odd in
//! `x₃`, then rescaling the minimizer by its Lagrange multiplier.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cc;
pub mod config;
pub mod driver;
pub mod energy;
pub mod error;
pub mod field;
pub mod linalg;
pub mod manifold;
pub mod minimizer;
pub mod nonlinearity;
pub mod poisson;
pub mod quad;
pub mod solution;

pub use error::{Result, SolverError};
pub use field::{AxiField, AxiGrid, Parity};
pub use nonlinearity::BLNonlinearity;
