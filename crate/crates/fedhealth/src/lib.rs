//! Desk-scale simulator for privacy-preserving federated learning on
//! wearable sensor data.
//!
//! The crate is organized around one storyline: a cloud model is trained on
//! pooled data (`nn`, `data`), shipped to clients under additively
//! homomorphic encryption (`crypto`), aggregated without the server ever
//! seeing individual contributions (`federation`), and finally adapted to
//! each client with frozen features plus an alignment penalty (`transfer`).
//! `eval` holds metrics, baselines and the experiment driver used by the
//! CLI.

pub mod data;
pub mod error;
pub mod eval;
pub mod federation;
pub mod nn;
pub mod tensor;
pub mod transfer;

pub mod crypto;

pub use error::{Error, Result};
pub use tensor::Tensor;
