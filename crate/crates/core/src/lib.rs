//! MapReduce mini-app benchmark harness with power capping and energy measurement.

pub mod dataset;
pub mod error;
pub mod experiment;
pub mod miniapps;
pub mod power;
pub mod runtime;

pub use error::{Error, Result};
