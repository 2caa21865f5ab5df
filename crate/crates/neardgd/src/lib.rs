//! Deterministic simulator for nested-consensus distributed stochastic
//! gradient methods over fixed undirected networks.
//!
//! The crate is organised bottom-up:
//! - [`topology`]: graph families and Metropolis consensus matrices,
//! - [`operators`]: randomized communication / gradient inexactness,
//! - [`objectives`]: per-node objectives, data sharding, ground truth,
//! - [`algorithms`]: the simulation engine (nested-consensus methods and
//!   the DGD / EXTRA / DIGing baselines),
//! - [`analysis`]: metrics, termination, theory constants and bounds,
//! - [`harness`]: configuration, presets, sweeps and trace persistence.

pub mod algorithms;
pub mod analysis;
pub mod error;
pub mod harness;
pub mod objectives;
pub mod operators;
pub mod rng;
pub mod topology;

pub use error::{Error, Result};
