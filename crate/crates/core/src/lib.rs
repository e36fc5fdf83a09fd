//! Fatigue-driven motion modulation.
//!
//! Joint angles are mapped to torques by a learned inverse-dynamics surrogate,
//! the torques are attenuated by a three-compartment fatigue model, and a
//! forward-dynamics surrogate maps the fatigued torques back to angles.

pub mod bilstm;
pub mod cc3;
pub mod dynamics;
pub mod error;
pub mod metrics;
pub mod motion;
pub mod nn;
pub mod ode;
pub mod pinn;
pub mod pipeline;

pub use error::{Error, ErrorKind, Result};
