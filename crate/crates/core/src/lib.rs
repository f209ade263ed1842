//! Simulation of the random d-process and tools for checking its hitting-time
//! behavior against the deterministic approximations.

pub mod error;
pub mod experiments;
pub mod process;
pub mod rng;
pub mod stats;
pub mod theory;

pub use error::{Error, Result};
