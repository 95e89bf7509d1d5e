//! Encoder, decoder and auxiliary heads assembled from the numerics operations.

mod autoencoder;
mod head;
mod network;
mod summary;

pub use autoencoder::{AutoEncoder, EncoderSpec, RunningStats};
pub use head::{Head, HeadSpec};
pub use network::{stack_chunks, Network};
pub use summary::{architecture_summary, LayerSummary};

/// Forward-pass mode: batch statistics and dropout in `Train`, running statistics in `Eval`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Kaiming-uniform bound for a fan-in under the leaky-ReLU gain.
pub(crate) fn kaiming_bound(fan_in: usize, slope: f64) -> f64 {
    let gain = (2.0 / (1.0 + slope * slope)).sqrt();
    gain * (3.0 / fan_in as f64).sqrt()
}
