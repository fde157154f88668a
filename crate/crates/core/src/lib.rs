//! Numerical laboratory for the one-dimensional granular media equation with a
//! symmetric double-well confinement and quadratic attraction.
//!
//! The crate computes the steady-state family and its self-consistency map,
//! checks an initial-condition criterion that selects the positive steady
//! state, and runs particle and finite-volume simulations against it.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod condition;
pub mod fokker_planck;
pub mod measures;
pub mod particle_sim;
pub mod poly;
pub mod potential;
pub mod quadrature;
pub mod steady_state;

pub use measures::{GridMeasure, GridSpec, InitialMeasureSpec, MeasureError};
pub use potential::{validate, EffectiveParams, PolynomialPotential, PotentialError, ValidatedPotential};
pub use quadrature::QuadratureSpec;
pub use steady_state::{SteadyStateError, SteadyStateReport, SteadyStateSpec};
