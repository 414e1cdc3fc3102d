//! Critical-configuration testing of driving policies: critical test-case
//! generation, a deterministic kinematic simulator, a verdict oracle and a
//! Leaderboard-style scorer.

pub mod error;
pub mod generator;
pub mod harness;
pub mod oracle;
pub mod kinematics;
pub mod policy;
pub mod scoring;
pub mod sim;
pub mod world;

pub use error::{Error, Result};
