//! Mixture of temporal experts for adapting text classifiers across time
//! domains without target labels.

pub mod baselines;
pub mod checkpoint;
pub mod classify;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod experts;
pub mod metrics;
pub mod mote;
pub mod numerics;
pub mod report;
pub mod rng;
pub mod runner;
pub mod shift_evaluator;
pub mod temporal_router;

pub use error::{MoteError, Result};
