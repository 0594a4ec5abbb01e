//! Compact CNN training engine with in-model kernel merging.
//!
//! During a short finetuning phase, every training iteration runs a sweep over
//! the deeper convolutional layers: each kernel is, with probability `p`,
//! paired with a random sibling from the same layer and replaced by the convex
//! combination `alpha * k_i + (1 - alpha) * k_j` when the two kernels have
//! cosine similarity above `tau`. Inference is merge-free.
//!
//! Module map:
//!
//! - [`tensor`] and [`layers`]: dense `f32` storage and explicit forward/backward math.
//! - [`model`]: layer stacks, presets and the named-parameter registry.
//! - [`merge`]: kernel similarity, convex merging and the per-iteration sweep.
//! - [`train`]: SGD with momentum, multi-step schedule, two-phase protocol, evaluation.
//! - [`data`]: dataset directory format, synthetic datasets, augmentation, batching.
//! - [`metrics`]: accuracy and Mann-Whitney AUROC.
//! - [`checkpoint`]: portable binary checkpoints.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod layers;
pub mod metrics;
pub mod merge;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use merge::{inmerge_sweep, MergeConfig, MergeReport};
pub use model::{build_model, ArchConfig, Model, Task};
pub use tensor::Tensor;
pub use train::{run_protocol, TrainConfig, TrainLog};
