//! Competence-aware navigation on topological maps.
//!
//! Robots plan over a directed graph of places using per-edge beliefs about
//! how likely each traversal is to fail, and in which way. Beliefs are
//! log-odds filters fed by failure reports and by an introspective predictor
//! that flags likely perception errors while the robot is driving.

pub mod belief;
pub mod classes;
pub mod cli;
pub mod config;
pub mod env;
pub mod introspection;
pub mod metrics;
pub mod predictor;
pub mod rng;
pub mod sim;
pub mod ssp;
pub mod topo_map;
