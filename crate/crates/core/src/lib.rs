//! Tumor-aware cross-modality augmentation for segmentation.
//!
//! Unpaired translation of labeled source-domain images into pseudo
//! target-domain images (with tumor-attention losses), segmentation training
//! on the augmented set, and the evaluation suite, all runnable on
//! procedurally generated two-domain phantoms.

pub mod error;
pub mod metrics;
pub mod nn;
pub mod phantom;
pub mod pipeline;
pub mod segmentation;
pub mod synthesis;

pub use error::{Error, Result};
