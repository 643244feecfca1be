//! Neural particle solver for the spatially homogeneous Landau equation.

pub mod baselines;
pub mod benchmarks;
pub mod error;
pub mod kernel;
pub mod metrics;
pub mod nn;
pub mod trainer;

pub use error::{LandauError, Result};
