//! Self-normalized confidence sets for Z-estimators.

pub mod calibrate;
pub mod cli;
pub mod confset;
pub mod error;
pub mod estimating;
pub mod numlin;
pub mod rng;
pub mod simharness;
pub mod statistic;

pub use error::{Error, Result};
