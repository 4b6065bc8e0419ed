//! Federated learning simulator with DDPG-driven adaptive aggregation.
//!
//! Clients train small MLPs locally; the server keeps the `M%` uploads
//! closest to everyone else, and an actor-critic agent chooses the convex
//! weights that combine them, rewarded by validation accuracy. A FedAvg
//! baseline and four Byzantine attack families are included.

pub mod clients;
pub mod config;
pub mod datasets;
pub mod ddpg;
pub mod error;
pub mod nn;
pub mod orchestrator;
pub mod output;
pub mod seed;
pub mod selection;
pub mod selftest;

pub use config::{Aggregator, ExperimentConfig};
pub use error::{FedError, Result};
pub use orchestrator::{run_experiment, run_fedavg_baseline, RoundRecord};
