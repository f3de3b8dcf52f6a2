//! Deterministic single-process simulator of federated learning with
//! ensemble knowledge distillation (FLEKD) for multi-class intrusion
//! detection on tabular flow features.
//!
//! Clients live in-process and only exchange [`nn::ModelParams`] with the
//! server. Every random draw is derived from explicit seeds, so a run is a
//! pure function of its configuration.

pub mod checkpoint;
pub mod data;
pub mod distillation;
pub mod error;
pub mod experiment;
pub mod federation;
pub mod metrics;
pub mod nn;
pub mod rng;

pub use error::{FlekdError, Result};
