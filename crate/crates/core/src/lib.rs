//! Active inference agent for SLO-driven adaptive stream processing.
//!
//! The agent observes windowed service metrics, maintains a discrete
//! Bayesian network relating configuration parameters to SLO fulfillment,
//! and picks the next configuration by weighing expected fulfillment
//! (pragmatic value) against expected model improvement (information gain).

pub mod agent;
pub mod bayesnet;
pub mod domain;
pub mod error;
pub mod harness;
pub mod sim;
pub mod slo;

pub use error::{Error, Result};
