//! Simulation engine for multimode photonic-condensate rate equations.
//!
//! The crate builds the physical model (cavity modes, molecular grid,
//! coupling matrix), constructs a hierarchy of collective molecular
//! excitation profiles, and integrates either the full rate equations or
//! their level-truncated reduction. Experiment drivers reproduce quench,
//! pulsed-pumping and runtime-benchmark protocols.
//!
//! Internal units: time in 1/κ (cavity decay), length in l_ho (oscillator
//! length), rates in κ.

pub mod config;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod hermite;
pub mod hierarchy;
pub mod model;
pub mod pump;

pub use error::{Error, Result};
