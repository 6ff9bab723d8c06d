//! Hierarchical MPC coordination for two coupled linear subsystems.
//!
//! Local MPC controllers negotiate coupling-signal profiles with a
//! coordinator through a filtered fixed-point iteration; the coordinator
//! certifies convergence from the spectral radius of the iteration matrix,
//! identifies the central cost as a quadratic in auxiliary set-points and
//! drives a receding-horizon closed loop. A seeded synthetic plant
//! generator stands in for the two-stage cryogenic refrigerator benchmark.

pub mod coordinator;
pub mod error;
pub mod local;
pub mod model;
pub mod prediction;
pub mod protocol;
pub mod simulator;
pub mod surrogate;
pub mod wire;

pub use error::{Error, Result};
