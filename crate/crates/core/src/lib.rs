//! Spectral simulation and control synthesis for the bilinear heat equation
//!
//! ∂ψ = Δψ − κψ^{p+1} + ⟨u(t), Q(x)⟩ψ on the torus T^d,
//!
//! covering approximate steering by saturation (conjugated impulsive
//! dynamics compiled from exponent expressions) and exact steering to the
//! ground state by stacked moment-problem controls.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod exact;
pub mod fft;
pub mod field;
pub mod linalg;
pub mod moment;
pub mod potentials;
pub mod quadrature;
pub mod saturation;
pub mod schedule;
pub mod solver;

pub use error::{Error, Result};
pub use field::{Basis, TorusField, PHI};
pub use potentials::{PotentialSet, Preset};
pub use schedule::{ControlLaw, ControlSchedule, Segment};
pub use solver::{Formulation, Record, SolverOptions, Trajectory};
