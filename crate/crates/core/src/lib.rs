//! Unpaired synthetic-to-real translation with a patchwise contrastive
//! objective, plus the segmentation protocol used to judge it.
//!
//! Numerical code is generic over [`syn2real_tensor::Scalar`]; the aliases
//! below fix the scalar for the common cases.

pub mod analysis;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod losses;
pub mod model;
pub mod pipeline;
pub mod plot;
pub mod rng;
pub mod segmentation;
pub mod translation;

pub use error::{Error, Result};

/// Working precision for training.
pub type TranslationModelF32 = model::TranslationModel<f32>;
/// Reference precision for gradient checks.
pub type TranslationModelF64 = model::TranslationModel<f64>;
pub type SegmenterF32 = segmentation::Segmenter<f32>;
pub type SegmenterStateF32 = segmentation::SegmenterState<f32>;
pub type TensorF32 = syn2real_tensor::Tensor<f32>;
pub type TensorF64 = syn2real_tensor::Tensor<f64>;
/// Exact per-class IoU.
pub type ExactIoU = num_rational::Ratio<u64>;
/// Exact mean IoU.
pub type ExactMeanIoU = num_rational::Ratio<u128>;
