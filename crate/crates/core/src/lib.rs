//! Finite element solvers for a chemo-repulsion model with quadratic
//! production: `u_t − Δu = ∇·(u∇v)`, `v_t − Δv + v = u²` under homogeneous
//! Neumann conditions on a rectangle.

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod expr;
pub mod fem;
pub mod mesh;
pub mod presets;
pub mod regularization;
pub mod runner;
pub mod scheme_us;
pub mod scheme_uv;
pub mod solvers;

pub use error::{Error, Result};
