//! Task offloading and early-exit threshold optimization for layered edge
//! inference pipelines.
//!
//! End devices (layer 0) emit inference tasks that traverse one edge server
//! per sub-model layer `1..=H`. Tasks may leave early at layers that carry an
//! exit branch. The crate provides the analytic delay model, a distributed
//! gradient-style optimizer for offloading probabilities and exit thresholds,
//! four heuristic baselines, and a discrete-event processor-sharing simulator
//! used to check the analytics.

pub mod analytics;
pub mod baselines;
pub mod dto;
pub mod error;
pub mod exit_profile;
pub mod fmt;
pub mod model;
pub mod par;
pub mod planner;
pub mod presets;
pub mod sim;

pub use error::{Error, Result};
