//! Simulation and analysis of radiation-induced quasiparticle bursts in
//! superconducting qubit and MKID chips.

pub mod analyze;
pub mod burst;
pub mod error;
pub mod materials;
pub mod pipeline;
pub mod radsource;
pub mod seed;
pub mod stats;
pub mod synth;
pub mod trigger;

pub use error::{Error, Result};
pub use seed::Seed;
