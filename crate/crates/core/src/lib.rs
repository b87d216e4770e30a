//! Spectral and computer-algebra workbench for Birkhoff normal forms of the
//! one-dimensional semilinear quantum harmonic oscillator
//! `i ψ_t = (-d²/dx² + x² + M) ψ + ∂₂g(ψ, ψ̄)`.

pub mod combinatorics;
pub mod dynamics;
pub mod error;
pub mod frequency;
pub mod harness;
pub mod hermite;
pub mod io;
pub mod nonlinearity;
pub mod normal_form;
pub mod poly;
pub mod state;

pub use error::{Error, Result};
