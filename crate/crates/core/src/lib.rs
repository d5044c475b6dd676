//! Interacting stochastic mirror descent: particle dynamics on the simplex,
//! benchmark objectives, metrics, bound calculators and verification oracles.

pub mod exec;
pub mod graph;
pub mod mirror;
pub mod objective;
pub mod rng;
pub mod dynamics;
pub mod metrics;
pub mod bounds;
pub mod oracle;
pub mod harness;
