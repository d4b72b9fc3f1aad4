use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::{Mask, Spacing};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn from_masks(pred: &Mask, gt: &Mask) -> Result<Self> {
        if pred.dim() != gt.dim() {
            return Err(Error::Shape(format!("pred {:?} vs gt {:?}", pred.dim(), gt.dim())));
        }
        let mut c = Self::default();
        for (&p, &t) in pred.iter().zip(gt.iter()) {
            match (p != 0, t != 0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => {}
            }
        }
        Ok(c)
    }

    /// `2TP / (FP + 2TP + FN)`; 1 when both masks are empty.
    pub fn dsc(&self) -> f64 {
        let denom = self.fp + 2 * self.tp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

pub fn dsc(pred: &Mask, gt: &Mask) -> Result<f64> {
    Ok(ConfusionCounts::from_masks(pred, gt)?.dsc())
}

/// Foreground volume in cubic centimetres for a slice of the given thickness.
pub fn mask_volume_cc(mask: &Mask, spacing: Spacing, slice_thickness_mm: f64) -> f64 {
    let n = mask.iter().filter(|&&m| m != 0).count() as f64;
    n * spacing.pixel_area_mm2() * slice_thickness_mm / 1000.0
}

/// `|V_alg - V_gt| / V_gt`.
pub fn volume_ratio(v_alg: f64, v_gt: f64) -> Result<f64> {
    if !(v_gt > 0.0) {
        return Err(Error::InvalidInput(format!("reference volume must be positive, got {v_gt}")));
    }
    Ok((v_alg - v_gt).abs() / v_gt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn identical_masks() {
        let m = array![[0u8, 1, 1], [1, 0, 0]];
        assert_eq!(dsc(&m, &m).unwrap(), 1.0);
    }

    #[test]
    fn counts_arithmetic() {
        let c = ConfusionCounts { tp: 2, fp: 1, fn_: 1 };
        assert!((c.dsc() - 4.0 / 6.0).abs() < 1e-15);
        let pred = array![[1u8, 1, 1, 0]];
        let gt = array![[1u8, 1, 0, 1]];
        assert_eq!(ConfusionCounts::from_masks(&pred, &gt).unwrap(), c);
    }

    #[test]
    fn empty_conventions() {
        let z = Array2::<u8>::zeros((3, 3));
        let mut one = z.clone();
        one[(1, 1)] = 1;
        assert_eq!(dsc(&z, &z).unwrap(), 1.0);
        assert_eq!(dsc(&z, &one).unwrap(), 0.0);
        assert_eq!(dsc(&one, &z).unwrap(), 0.0);
    }

    #[test]
    fn shape_mismatch() {
        assert!(dsc(&Array2::zeros((2, 2)), &Array2::zeros((2, 3))).is_err());
    }

    #[test]
    fn volume_ratio_cases() {
        assert_eq!(volume_ratio(50.0, 50.0).unwrap(), 0.0);
        assert_eq!(volume_ratio(75.0, 50.0).unwrap(), 0.5);
        assert_eq!(volume_ratio(0.0, 50.0).unwrap(), 1.0);
        assert!(volume_ratio(1.0, 0.0).is_err());
    }

    #[test]
    fn volume_in_cc() {
        let m = Array2::<u8>::ones((10, 10));
        let v = mask_volume_cc(&m, Spacing::new(1.0, 2.0).unwrap(), 2.5);
        assert!((v - 0.5).abs() < 1e-12);
    }
}
