//! Ensemble-based community search over multilayer graphs.
//!
//! The pipeline trains a diffusion-based encoder per layer with three
//! label-free losses, scores nodes against query representations, identifies
//! one candidate community per layer by maximizing expected score gain, and
//! merges the per-layer decisions into a consensus community with a
//! Dawid–Skene style EM that models each layer's error rates.

pub mod config;
pub mod consensus;
pub mod diffusion;
pub mod encoder;
pub mod training;
pub mod error;
pub mod eval;
pub mod graph;
pub mod nn;
pub mod pipeline;
pub mod search;
pub mod synth;
pub mod par;

pub use error::{MlcsError, Result};
