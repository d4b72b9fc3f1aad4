//! On-disk dataset layout: `manifest.json` + `images/*.png` (16-bit) + `masks/*.png` (8-bit).

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Domain, Image, Mask, Sample, Spacing, Split};
use crate::error::{Error, IoContext, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Whether stored intensities are raw scanner-like units or already in `[-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntensityScale {
    Raw,
    Normalized,
}

/// Float reconstruction of a 16-bit pixel: `offset + scale * stored`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rescale {
    pub offset: f64,
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub subject_id: String,
    pub domain: Domain,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timepoint: Option<u32>,
    pub spacing: [f64; 2],
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    pub rescale: Rescale,
    pub intensity: IntensityScale,
    /// Set on pseudo-B samples: the domain-A sample they were translated from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pseudo_of: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
    pub slice_thickness_mm: f64,
    pub samples: Vec<SampleRecord>,
}

impl DatasetManifest {
    /// Structural checks that do not touch the filesystem.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Dataset(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let mut ids = HashSet::new();
        for rec in &self.samples {
            if !ids.insert(rec.id.as_str()) {
                return Err(Error::Dataset(format!("sample `{}` listed twice", rec.id)));
            }
            Spacing::new(rec.spacing[0], rec.spacing[1])?;
            if rec.domain == Domain::A && rec.split == Split::Train && rec.mask.is_none() {
                return Err(Error::Dataset(format!(
                    "domain-A training sample `{}` has no mask",
                    rec.id
                )));
            }
        }
        Ok(())
    }

    pub fn select(&self, domain: Domain, split: Split) -> impl Iterator<Item = &SampleRecord> {
        self.samples
            .iter()
            .filter(move |r| r.domain == domain && r.split == split)
    }
}

/// A dataset directory, either being written or opened for reading.
#[derive(Debug)]
pub struct Dataset {
    root: PathBuf,
    manifest: DatasetManifest,
}

impl Dataset {
    pub fn create(root: &Path, generation_seed: Option<u64>, slice_thickness_mm: f64) -> Result<Self> {
        fs::create_dir_all(root.join("images")).at(root)?;
        fs::create_dir_all(root.join("masks")).at(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            manifest: DatasetManifest {
                schema_version: SCHEMA_VERSION,
                generation_seed,
                provenance: None,
                slice_thickness_mm,
                samples: Vec::new(),
            },
        })
    }

    pub fn set_provenance(&mut self, provenance: impl Into<String>) {
        self.manifest.provenance = Some(provenance.into());
    }

    pub fn push(
        &mut self,
        sample: &Sample,
        split: Split,
        intensity: IntensityScale,
        pseudo_of: Option<String>,
    ) -> Result<()> {
        sample.validate()?;
        let image_rel = format!("images/{}.png", sample.id);
        let rescale = write_image16(&self.root.join(&image_rel), &sample.image)?;
        let mask_rel = match &sample.mask {
            Some(mask) => {
                let rel = format!("masks/{}.png", sample.id);
                write_mask(&self.root.join(&rel), mask)?;
                Some(rel)
            }
            None => None,
        };
        self.manifest.samples.push(SampleRecord {
            id: sample.id.clone(),
            subject_id: sample.subject_id.clone(),
            domain: sample.domain,
            split,
            timepoint: sample.timepoint,
            spacing: [sample.spacing.row_mm, sample.spacing.col_mm],
            image: image_rel,
            mask: mask_rel,
            rescale,
            intensity,
            pseudo_of,
        });
        Ok(())
    }

    pub fn finish(self) -> Result<DatasetManifest> {
        self.manifest.validate()?;
        let path = self.root.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(&path, text + "\n").at(&path)?;
        Ok(self.manifest)
    }

    /// Opens a dataset directory and checks every referenced file exists.
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).at(&path)?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        manifest.validate()?;
        for rec in &manifest.samples {
            for rel in std::iter::once(&rec.image).chain(rec.mask.iter()) {
                if !root.join(rel).is_file() {
                    return Err(Error::Dataset(format!(
                        "sample `{}` references missing file {rel}",
                        rec.id
                    )));
                }
            }
        }
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn load(&self, rec: &SampleRecord) -> Result<Sample> {
        let image = read_image16(&self.root.join(&rec.image), rec.rescale)?;
        let mask = rec
            .mask
            .as_ref()
            .map(|rel| read_mask(&self.root.join(rel)))
            .transpose()?;
        let mut sample = Sample::new(
            &rec.id,
            &rec.subject_id,
            rec.domain,
            Spacing::new(rec.spacing[0], rec.spacing[1])?,
            image,
            mask,
        )?;
        sample.timepoint = rec.timepoint;
        Ok(sample)
    }

    pub fn load_where(&self, pred: impl Fn(&SampleRecord) -> bool) -> Result<Vec<(SampleRecord, Sample)>> {
        self.manifest
            .samples
            .iter()
            .filter(|r| pred(r))
            .map(|r| Ok((r.clone(), self.load(r)?)))
            .collect()
    }
}

pub(crate) fn write_image16(path: &Path, image: &Image) -> Result<Rescale> {
    let (h, w) = image.dim();
    let (lo, hi) = image
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidInput(format!("{}: non-finite pixels", path.display())));
    }
    let offset = lo as f64;
    let scale = if hi > lo { (hi as f64 - offset) / 65535.0 } else { 1.0 };
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let v = image[(y as usize, x as usize)] as f64;
        Luma([((v - offset) / scale).round().clamp(0.0, 65535.0) as u16])
    });
    buf.save(path)?;
    Ok(Rescale { offset, scale })
}

pub(crate) fn read_image16(path: &Path, rescale: Rescale) -> Result<Image> {
    let img = image::open(path)?.into_luma16();
    let (w, h) = img.dimensions();
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(r, c)| {
        (rescale.offset + rescale.scale * img.get_pixel(c as u32, r as u32)[0] as f64) as f32
    }))
}

pub(crate) fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    let (h, w) = mask.dim();
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        Luma([if mask[(y as usize, x as usize)] != 0 { 255 } else { 0 }])
    });
    buf.save(path)?;
    Ok(())
}

pub(crate) fn read_mask(path: &Path) -> Result<Mask> {
    let img = image::open(path)?.into_luma8();
    let (w, h) = img.dimensions();
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(r, c)| {
        u8::from(img.get_pixel(c as u32, r as u32)[0] >= 128)
    }))
}
