//! Minimal tensor engine: the differentiable operations of the auto-encoder and heads,
//! losses, SGD and finite-difference verification.

pub mod checkpoint;
pub mod gradcheck;
pub mod kernels;
pub mod params;
pub mod rng;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use checkpoint::{Checkpoint, CheckpointEntry, EntryKind};
pub use gradcheck::grad_check;
pub use params::{sgd_step, Bound, Group, GroupMask, Param, ParamSet, SgdState};
pub use rng::{shuffle, substream, Rng};
pub use scalar::Scalar;
pub use tape::{softmax_rows, BatchStats, Tape, Var};
pub use tensor::Tensor;

/// Batch-norm epsilon.
pub const BN_EPS: f64 = 1e-5;
/// Running-statistics momentum.
pub const BN_MOMENTUM: f64 = 0.1;
/// Default leaky-ReLU negative slope.
pub const LEAKY_SLOPE: f64 = 0.01;
