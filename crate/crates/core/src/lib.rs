//! Debiased knowledge distillation at desk scale.
//!
//! A debiased teacher is trained on a synthetic spuriously-correlated
//! dataset and distilled into a smaller student by vanilla KD, by feature
//! distillation behind the teacher's transplanted (frozen) classifier, or
//! by the same with identified bias-conflicting samples upweighted.
//!
//! - [`nncore`]: dense networks, losses, SGD, gradient checking, checkpoints
//! - [`datagen`]: synthetic biased datasets and the dataset file format
//! - [`debias`]: ERM, group DRO, and identify-then-upweight training
//! - [`distill`]: KD, transplanting, and feature-distillation pipelines
//! - [`eval`]: groupwise accuracy and checkpoint selection

pub mod datagen;
pub mod debias;
pub mod distill;
mod error;
pub mod eval;
pub mod io;
pub mod nncore;
pub mod rng;

pub use error::{Error, Result};
