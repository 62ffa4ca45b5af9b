//! Federated-learning simulator built around a server-side meta-layer that
//! learns per-client aggregation weights from a held-out validation loss,
//! together with the classical Byzantine-robust baselines it is compared to.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`] and [`nn`]: flat parameter vectors, a row-major matrix and a
//!   ReLU MLP with hand-written backpropagation.
//! - [`data`]: IDX ingestion, synthetic blobs, client partitioning and the
//!   poisoning attacks.
//! - [`client`]: Adam-based local training.
//! - [`aggregators`]: FedAvg, geometric median, trimmed mean, Krum, FoolsGold.
//! - [`meta`]: importance weights, meta-gradients and their stabilisation.
//! - [`engine`]: round orchestration, experiment configs and sweeps.
//!
//! Every random draw flows from an explicit seed; identical configurations
//! produce bitwise-identical results regardless of thread count.

pub mod aggregators;
pub mod client;
pub mod data;
pub mod engine;
mod error;
pub mod meta;
pub mod nn;
pub mod seed;
pub mod tensor;

pub use error::{FlError, Result};
