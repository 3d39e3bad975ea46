//! Desk-scale multimodal action-transcript model over a synthetic gridworld.
//!
//! The crate is one pipeline: `world` generates episodes, `encoders` map
//! frames, action windows, and instruction text into a shared embedding
//! space, `contrastive` aligns those spaces, `fusion` runs the causal
//! multimodal transformer, `losses` defines the supervised objectives, and
//! `harness` ties training, evaluation, checkpoints, and metrics together
//! behind the CLI.

pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod contrastive;
pub mod encoders;
pub mod exec;
pub mod fusion;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod world;
