pub mod checkpoint;
pub mod config;
pub mod data;
pub mod equilibrium;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod plot;
pub mod report;
pub mod rng;
pub mod tensor;
pub mod trainers;

pub use error::{Error, Result};
