//! Unsupervised visual anomaly detection for mobile-robot camera streams.
//!
//! An autoencoder compresses 64×64 grayscale frames into latents, a Real NVP
//! flow models the density of normal latents, and the negative
//! log-likelihood of a frame's latent is its anomaly score. Both models are
//! trained on normal frames only. Scores are evaluated with ROC/AUC per
//! anomaly type and taxonomy axis, and drive a stop/backtrack monitor over a
//! live stream.

pub mod autoencoder;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod flow;
pub mod monitor;
pub mod numeric;
pub mod pipeline;
pub mod score;
pub mod synth;

pub use error::{Error, Result};
