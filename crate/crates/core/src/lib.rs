//! Multi-task Gaussian processes with spectral mixture kernels.

pub mod data;
pub mod error;
pub mod gp;
pub mod kernel;
pub mod multitask;
pub mod spectral;
pub mod trainer;

pub use error::{Error, Result};
