//! Hopf bifurcation analysis for semilinear evolution equations `u_t = A u + h(λ, u)`.
//!
//! Periodic orbits near a Hopf point are computed as zeros of a scaled extended system on a
//! space of 2π-periodic space-time fields, after rescaling time by `σ + 1`.

pub mod conditions;
pub mod continuation;
pub mod error;
pub mod extended;
pub mod linalg;
pub mod problems;
pub mod spacetime;
pub mod verify;

pub use error::{HopfError, Result};
pub use problems::{ex1_build, ex2_build, EvolutionProblem, EvolutionSystem, Example1Config, Example2Config};
pub use spacetime::SpaceTimeField;
