//! Numerical laboratory for the critical complex Ginzburg–Landau blow-up
//! construction (β = 0, δ² = p, one space dimension).
//!
//! Modules follow the pipeline: closed-form constants and profiles
//! ([`params`]), the Hermite/Mehler toolbox ([`hermite`]), modal splitting and
//! shrinking-set monitor ([`decomp`]), profile residual and potentials
//! ([`residual`]), formal asymptotic series ([`series`]), the reduced modal ODE
//! ([`modalode`]) and the modulated PDE evolution ([`sim`]). The [`cli`] module
//! exposes all of it on the command line.

pub mod cli;
pub mod decomp;
pub mod error;
pub mod fit;
pub mod hermite;
pub mod io;
pub mod modalode;
pub mod params;
pub mod residual;
pub mod series;
pub mod sim;

pub use error::{LabError, Result};
pub use num_complex::Complex64 as C64;
