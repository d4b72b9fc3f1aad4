use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Sample, Spacing};
use crate::error::{Error, Result};

/// Rotation about the image center followed by an axis-aligned stretch.
///
/// Positive angles rotate the content counter-clockwise as displayed (row 0 at
/// the top). The output keeps the input's pixel grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Augmentation {
    pub rotate_deg: f64,
    /// `(rows, cols)` scale factors applied to the content.
    pub stretch: (f64, f64),
}

impl Augmentation {
    pub const IDENTITY: Self = Self {
        rotate_deg: 0.0,
        stretch: (1.0, 1.0),
    };

    pub fn rotate(deg: f64) -> Self {
        Self {
            rotate_deg: deg,
            ..Self::IDENTITY
        }
    }

    pub fn stretch(sy: f64, sx: f64) -> Self {
        Self {
            stretch: (sy, sx),
            ..Self::IDENTITY
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = |s: f64| s > 0.5 && s < 2.0;
        if !ok(self.stretch.0) || !ok(self.stretch.1) {
            return Err(Error::InvalidInput(format!(
                "stretch {:?} outside (0.5, 2.0)",
                self.stretch
            )));
        }
        if !self.rotate_deg.is_finite() {
            return Err(Error::InvalidInput("rotation angle must be finite".into()));
        }
        Ok(())
    }
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-12 {
        r
    } else {
        v
    }
}

pub fn augment(sample: &Sample, op: Augmentation) -> Result<Sample> {
    op.validate()?;
    let (h, w) = sample.shape();
    let theta = op.rotate_deg.to_radians();
    let (sin, cos) = (snap(theta.sin()), snap(theta.cos()));
    let (sy, sx) = op.stretch;
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    // Inverse map: output pixel -> source coordinate.
    let source = |r: usize, c: usize| -> (f64, f64) {
        let yo = (r as f64 - cy) / sy;
        let xo = (c as f64 - cx) / sx;
        let x = xo * cos - yo * sin;
        let y = xo * sin + yo * cos;
        (y + cy, x + cx)
    };

    let img = &sample.image;
    let at = |r: isize, c: isize| img[(r.clamp(0, h as isize - 1) as usize, c.clamp(0, w as isize - 1) as usize)];
    let image = Array2::from_shape_fn((h, w), |(r, c)| {
        let (y, x) = source(r, c);
        let (y0, x0) = (y.floor(), x.floor());
        let (fy, fx) = ((y - y0) as f32, (x - x0) as f32);
        let (y0, x0) = (y0 as isize, x0 as isize);
        let top = if fx == 0.0 {
            at(y0, x0)
        } else {
            at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx
        };
        if fy == 0.0 {
            top
        } else {
            let bottom = if fx == 0.0 {
                at(y0 + 1, x0)
            } else {
                at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx
            };
            top * (1.0 - fy) + bottom * fy
        }
    });
    let mask = sample.mask.as_ref().map(|m| {
        Array2::from_shape_fn((h, w), |(r, c)| {
            let (y, x) = source(r, c);
            let (y, x) = (y.round(), x.round());
            if y < 0.0 || x < 0.0 || y >= h as f64 || x >= w as f64 {
                0
            } else {
                m[(y as usize, x as usize)]
            }
        })
    });

    let mut out = sample.clone();
    out.image = image;
    out.mask = mask;
    out.spacing = Spacing::new(sample.spacing.row_mm / sy, sample.spacing.col_mm / sx)?;
    Ok(out)
}
