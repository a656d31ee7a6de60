//! Engine for estimating a language learner's per-word knowledge state from
//! interaction logs and generating translation exercises conditioned on that
//! state, a target word set, and a target difficulty.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod decoder;
pub mod error;
pub mod generator;
pub mod joint;
pub mod metrics;
pub mod recommender;
pub mod simulator;
pub mod nn;
pub mod tape;
pub mod tensor;
pub mod tracer;

pub use error::{Error, Result};
