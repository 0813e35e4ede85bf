//! Numerical laboratory for gradient blow-up in 1D quasilinear hyperbolic
//! systems `u_t + a(u) u_x = g(u)`.
//!
//! The crate builds simple-wave initial data on the genuinely nonlinear
//! field, evolves it with a high-order finite-difference scheme, traces
//! characteristics, measures the smallness functionals that control the
//! interaction of waves, and compares the observed lifespan with a Riccati
//! comparison bound.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod characteristics;
pub mod coefficients;
pub mod error;
pub mod evolve;
pub mod floats;
pub mod initialdata;
pub mod lifespan;
pub mod model;
pub mod ode;
pub mod sampling;
pub mod spectral;

pub use error::{Error, ErrorKind, Result};
pub use model::SystemModel;
