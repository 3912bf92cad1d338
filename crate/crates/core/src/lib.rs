//! Knowledge-guided radiomap estimation.
//!
//! Stage 1 fits a spline Kolmogorov–Arnold network to sparse received-power
//! observations and evaluates it densely as a coarse coverage prior. Stage 2
//! stacks that prior with building, transmitter, observation and radio-depth
//! rasters and refines it with a UNet-style network whose bottleneck runs
//! Transformer blocks with sparse mixture-of-experts feed-forward layers.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod kan;
pub mod priors;
pub mod refiner;
pub mod scene;
pub mod tensor;

pub use error::{Error, Result};
