//! Simultaneous translation with an explicit delay token.
//!
//! A decoder chooses between reading one more source word (the delay token)
//! and writing a target word. Training imitates a restricted dynamic oracle
//! that keeps the lag inside a band, and decoding trades latency for quality
//! through a single temperature added to the delay score.

pub mod cli;
pub mod data;
pub mod decoding;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod training;
pub mod transition;

pub use model::{ModelConfig, ScoreVector, ScorerModel};
pub use oracle::{Gamma, OracleConfig};
pub use transition::{Action, ActionSequence, PrefixState, Vocab};
