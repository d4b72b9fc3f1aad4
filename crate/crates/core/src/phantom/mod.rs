//! Two-domain phantom corpora, dataset persistence and all image-side preprocessing.
//!
//! Domain `A` is the labeled "CT-like" source, domain `B` the "MR-like" target.
//! Images are plain `ndarray` arrays; masks are `u8` arrays holding 0 or 1.

mod augment;
mod config;
mod dataset;
mod generate;
mod landmarks;
mod normalize;
mod patches;

pub use augment::{augment, Augmentation};
pub use config::{Palette, PhantomConfig};
pub use dataset::{Dataset, DatasetManifest, IntensityScale, Rescale, SampleRecord, MANIFEST_FILE, SCHEMA_VERSION};
pub(crate) use dataset::{read_mask, write_mask};
pub use generate::{generate_phantoms, generate_samples};
pub(crate) use generate::derive_seed;
pub use landmarks::{apply_landmarks, fit_landmarks, image_landmarks, LandmarkModel, LANDMARK_PERCENTILES};
pub use normalize::{clip_and_normalize, clip_range, denormalize};
pub use patches::{extract_patches, reflect_pad_to};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Image = Array2<f32>;
pub type Mask = Array2<u8>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Domain {
    A,
    B,
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Domain::A => "A",
            Domain::B => "B",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Physical pixel size in millimetres.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spacing {
    pub row_mm: f64,
    pub col_mm: f64,
}

impl Spacing {
    pub fn new(row_mm: f64, col_mm: f64) -> Result<Self> {
        if !(row_mm > 0.0 && col_mm > 0.0 && row_mm.is_finite() && col_mm.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "spacing must be positive, got ({row_mm}, {col_mm})"
            )));
        }
        Ok(Self { row_mm, col_mm })
    }

    pub fn isotropic(mm: f64) -> Self {
        Self { row_mm: mm, col_mm: mm }
    }

    pub fn pixel_area_mm2(&self) -> f64 {
        self.row_mm * self.col_mm
    }
}

/// One 2D grayscale slice with optional binary tumor mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub subject_id: String,
    pub domain: Domain,
    pub timepoint: Option<u32>,
    pub spacing: Spacing,
    pub image: Image,
    pub mask: Option<Mask>,
}

impl Sample {
    pub fn new(
        id: impl Into<String>,
        subject_id: impl Into<String>,
        domain: Domain,
        spacing: Spacing,
        image: Image,
        mask: Option<Mask>,
    ) -> Result<Self> {
        let sample = Self {
            id: id.into(),
            subject_id: subject_id.into(),
            domain,
            timepoint: None,
            spacing,
            image,
            mask,
        };
        sample.validate()?;
        Ok(sample)
    }

    pub fn with_timepoint(mut self, week: u32) -> Self {
        self.timepoint = Some(week);
        self
    }

    pub fn validate(&self) -> Result<()> {
        Spacing::new(self.spacing.row_mm, self.spacing.col_mm)?;
        if let Some(mask) = &self.mask {
            if mask.dim() != self.image.dim() {
                return Err(Error::Shape(format!(
                    "sample {}: mask {:?} vs image {:?}",
                    self.id,
                    mask.dim(),
                    self.image.dim()
                )));
            }
            if mask.iter().any(|&m| m > 1) {
                return Err(Error::InvalidInput(format!("sample {}: mask is not binary", self.id)));
            }
        }
        Ok(())
    }

    pub fn shape(&self) -> (usize, usize) {
        self.image.dim()
    }

    pub fn foreground(&self) -> usize {
        self.mask.as_ref().map_or(0, |m| m.iter().filter(|&&v| v != 0).count())
    }
}
