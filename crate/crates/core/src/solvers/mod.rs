pub mod linear;
pub mod nonlinear;

pub use linear::{solve_linear, Factorization, LinearMethod, LinearSolveConfig};
pub use nonlinear::{newton_solve, AndersonMixer, NewtonConfig, NewtonOutcome, NewtonSystem, PicardConfig};
