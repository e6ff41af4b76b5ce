//! Mixed-precision quantization toolkit.
//!
//! The pipeline has three stages: (1) quantization-aware training of a bank
//! of per-layer, per-bit-width scale factors whose learned magnitudes rank
//! layer sensitivity, (2) a one-time exact integer program that picks one
//! (weight-bit, activation-bit) pair per layer under BitOps and model-size
//! budgets, and (3) fine-tuning of the network at the chosen bit-widths.
//! No training data is touched during the search stage.

pub mod config;
pub mod cost;
pub mod data;
pub mod error;
pub mod ilp;
pub mod indicator;
pub mod model;
pub mod pipeline;
pub mod quant;
pub mod report;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
