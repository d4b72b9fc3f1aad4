//! Piecewise-linear percentile-landmark intensity standardization.
//!
//! Landmarks are order statistics (nearest-rank, lower), so a standardized
//! image reproduces the reference landmarks exactly and a second application
//! is the identity.

use serde::{Deserialize, Serialize};

use super::Image;
use crate::error::{Error, Result};

pub const LANDMARK_PERCENTILES: [f64; 11] =
    [1.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0, 99.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkModel {
    pub reference_landmarks: Vec<f64>,
}

impl LandmarkModel {
    pub fn new(reference_landmarks: Vec<f64>) -> Result<Self> {
        if reference_landmarks.len() != LANDMARK_PERCENTILES.len() {
            return Err(Error::InvalidInput(format!(
                "expected {} landmarks, got {}",
                LANDMARK_PERCENTILES.len(),
                reference_landmarks.len()
            )));
        }
        if reference_landmarks.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidInput(
                "reference landmarks must be strictly ascending".into(),
            ));
        }
        Ok(Self {
            reference_landmarks,
        })
    }
}

fn lower_percentile(sorted: &[f64], p: f64) -> f64 {
    let idx = ((p / 100.0) * (sorted.len() - 1) as f64).floor() as usize;
    sorted[idx.min(sorted.len() - 1)]
}

/// The landmark intensities of one image.
pub fn image_landmarks(image: &Image) -> Result<Vec<f64>> {
    let mut values: Vec<f64> = image.iter().map(|&v| v as f64).collect();
    if values.is_empty() {
        return Err(Error::InvalidInput("empty image".into()));
    }
    values.sort_by(f64::total_cmp);
    let marks: Vec<f64> = LANDMARK_PERCENTILES
        .iter()
        .map(|&p| lower_percentile(&values, p))
        .collect();
    if marks[0] == marks[marks.len() - 1] {
        return Err(Error::InvalidInput(format!(
            "constant-valued image (all landmarks = {}) cannot be standardized",
            marks[0]
        )));
    }
    Ok(marks)
}

pub fn fit_landmarks<'a>(images: impl IntoIterator<Item = &'a Image>) -> Result<LandmarkModel> {
    let mut sum = vec![0.0; LANDMARK_PERCENTILES.len()];
    let mut n = 0usize;
    for image in images {
        for (acc, v) in sum.iter_mut().zip(image_landmarks(image)?) {
            *acc += v;
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::InvalidInput("at least one training image is required".into()));
    }
    LandmarkModel::new(sum.into_iter().map(|s| s / n as f64).collect())
}

/// Maps the image's own landmarks onto the model's reference landmarks.
///
/// Values outside the outer landmarks follow the slope of the nearest segment.
pub fn apply_landmarks(image: &Image, model: &LandmarkModel) -> Result<Image> {
    let src = image_landmarks(image)?;
    let dst = &model.reference_landmarks;
    // Tied source landmarks collapse; keep the segments with positive width.
    let mut knots: Vec<(f64, f64)> = Vec::with_capacity(src.len());
    for (&x, &y) in src.iter().zip(dst) {
        match knots.last() {
            Some(&(px, _)) if x <= px => {}
            _ => knots.push((x, y)),
        }
    }
    if knots.len() < 2 {
        return Err(Error::InvalidInput("degenerate landmarks".into()));
    }
    let last = knots.len() - 1;
    Ok(image.mapv(|v| {
        let v = v as f64;
        let seg = knots.partition_point(|&(x, _)| x <= v).clamp(1, last);
        let (x0, y0) = knots[seg - 1];
        let (x1, y1) = knots[seg];
        let out = if v == x0 {
            y0
        } else {
            y0 + (v - x0) * (y1 - y0) / (x1 - x0)
        };
        out as f32
    }))
}
