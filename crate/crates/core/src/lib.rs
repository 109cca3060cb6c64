//! Simulation and analysis toolkit for coherent control of an NV spin
//! ensemble through a thermally tuned dielectric resonator.
//!
//! Units: frequencies in GHz at the API boundary (MHz for Rabi rates and
//! detunings), fields in mT, times in µs, lengths in mm, powers in W.

// NaN-rejecting guards are written as `!(x > 0.0)` throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod budget;
pub mod ensemble;
pub mod error;
pub mod field;
pub mod fitting;
pub mod resonator;
pub mod spin;

pub use error::{Error, Result};

/// Cartesian vector in the diamond frame.
pub type Vec3 = nalgebra::Vector3<f64>;
