//! Framework-free MobileNetV2 inference and transfer-learning kernels for
//! chest X-ray classification.
//!
//! The crate is `no_std` (it needs `alloc`). Everything that touches files,
//! image codecs or the command line lives in the `lungline` crate.
//!
//! Module map:
//!
//! - [`tensor`]: dense NCHW tensors and the numeric kernels.
//! - [`arch`]: the MobileNetV2 graph, head replacement, forward pass and
//!   parameter accounting.
//! - [`weights`]: the LWT weight container codec and weight binding.
//! - [`preprocess`]: resize, grayscale replication, normalization and
//!   seeded augmentation.
//! - [`data`]: manifests, stratified splits and batching.
//! - [`metrics`]: confusion matrices and one-vs-rest diagnostic metrics.
//! - [`finetune`]: head-only training with Adam and a one-cycle schedule.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod arch;
pub mod data;
mod error;
pub mod finetune;
pub mod metrics;
pub mod preprocess;
pub mod rng;
pub mod tensor;
pub mod weights;

pub use error::{ClassDeficit, Error, Result};
pub use tensor::Tensor;
