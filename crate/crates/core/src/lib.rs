//! Numerical laboratory for strictly hyperbolic Cauchy problems whose
//! coefficients have low regularity in time.
//!
//! Modules follow the pipeline: moduli of continuity and weights describe
//! regularity, `coeffs` and `roots` build problems and mollified
//! characteristic roots, `reduction` produces the per-frequency first-order
//! system and its diagonalizer, `energy` integrates and fits losses, and
//! `pdo` checks the symbol calculus on a truncated torus.

pub mod cli;
pub mod coeffs;
pub mod energy;
pub mod error;
pub mod fit;
pub mod ids;
pub mod moduli;
pub mod ode;
pub mod pdo;
pub mod quad;
pub mod reduction;
pub mod roots;
pub mod taylor;
pub mod weights;

pub use error::{HypError, Result};

/// Japanese bracket `<x> = sqrt(1 + x^2)`.
pub fn japanese(x: f64) -> f64 {
    x.hypot(1.0)
}
