//! Selective randomization inference for adaptive multi-stage experiments.

pub mod context;
pub mod error;
pub mod fixtures;
pub mod inference;
pub mod normal;
pub mod rng;
pub mod samplers;
pub mod selection;
pub mod sim;
pub mod statistics;
pub mod trial;

pub use context::NullContext;
pub use error::{Error, Result};
pub use trial::{Trial, TrialRecord, TrialSpec};
