//! Layer-wise teacher-student compression of feed-forward convolutional networks.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense `f64` tensors and the forward/backward kernels for
//!   convolution, dense, max-pooling and ReLU layers.
//! - [`graph`]: declarative architecture files, model construction, checkpoints
//!   and exact parameter / multiply-accumulate accounting.
//! - [`optim`]: softmax, cross-entropy, teacher MSE and the combined loss,
//!   RMSProp, the mini-batch training loop and a finite-difference checker.
//! - [`cram`]: the compression engine. A plan is sliced into sub-problems that
//!   are retrained one at a time from the output end towards the input, each
//!   fed with cached activations of the network as it stands.
//! - [`data`]: CIFAR-10 binary ingestion, synthetic datasets, batching, splits.
//! - [`report`]: the three normalised metrics, experiment orchestration and
//!   CSV / Markdown emission.

pub mod cram;
pub mod data;
pub mod error;
pub mod graph;
pub mod optim;
pub mod report;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{ArchitectureSpec, LayerKind, LayerSpec, Model};
pub use tensor::{Padding, Tensor};

#[cfg(test)]
pub(crate) mod testutil;
