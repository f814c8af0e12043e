//! Patient-flow simulation of hospital bed demand, with parameter
//! calibration and surrogate-based sensitivity analysis.

pub mod data;
pub mod error;
pub mod objective;
pub mod params;
pub mod sensa;
pub mod sim;
pub mod smbo;
pub mod stats;
pub mod stochastic;
pub mod surrogate;

pub use error::{Error, Result};
