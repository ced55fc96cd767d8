//! Bi-level imitation traffic simulation.
//!
//! Synthetic expert logs on procedural maps train a spatial goal network, a
//! goal-conditioned controller and a neighbor predictor; closed-loop rollouts
//! pick among sampled plans with a rule-based collision and off-road cost,
//! and a metric suite scores failure rates, coverage, diversity and realism.

pub mod dynamics;
pub mod error;
pub mod io;
pub mod metrics;
pub mod models;
pub mod planner;
pub mod raster;
pub mod simengine;
pub mod world;

pub use error::{Result, SimError};
