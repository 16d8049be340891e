//! Implicit monotone finite-difference solver for generalized porous medium
//! equations `∂ₜu - 𝔏[φ(u)] = g` with nonlocal Lévy-type diffusion, plus the
//! diagnostics used to study uniform tail control of the discrete solutions.

pub mod check;
pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod elliptic;
pub mod error;
pub mod evolution;
pub mod flux;
pub mod grid;
pub mod levy;
pub mod quadrature;

pub use error::{GpmeError, Result};
