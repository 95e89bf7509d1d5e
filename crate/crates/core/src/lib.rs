//! Supervised auto-encoder representation learning for pathological speech classification.
//!
//! A convolutional auto-encoder over 126x125 log-mel chunks is trained alone, adversarially
//! against a speaker-ID head, jointly with a PD classifier head, or with both. The learned
//! bottleneck feeds a downstream classifier evaluated under speaker-independent
//! cross-validation.

pub mod cli;
pub mod dsp;
pub mod error;
pub mod evaluation;
pub mod gradsuite;
pub mod models;
pub mod numerics;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
