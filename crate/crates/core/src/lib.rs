//! Two-stage automated quality assessment for MRI volumes.

pub mod cli;
pub mod cost_model;
pub mod domain;
pub mod error;
pub mod forest;
pub mod metrics;
pub mod nrnet;
pub mod seed;
pub mod selftrain;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
