//! Adversarial, cycle-consistency and tumor-attention losses. All functions
//! take and return graph tensors so they can be differentiated.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::scalar;

/// Clamp applied to discriminator probabilities before taking logs.
pub const PROB_EPS: f64 = 1e-7;
/// Additive smoothing of the soft Dice ratio.
pub const DICE_SMOOTH: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub cyc: f64,
    pub shape: f64,
    pub loc: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            cyc: 10.0,
            shape: 5.0,
            loc: 1.0,
        }
    }
}

impl LossWeights {
    /// Plain cycle-consistent translation without tumor attention.
    pub fn without_attention(self) -> Self {
        Self {
            shape: 0.0,
            loc: 0.0,
            ..self
        }
    }

    pub fn uses_attention(&self) -> bool {
        self.shape != 0.0 || self.loc != 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if [self.cyc, self.shape, self.loc].iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config(format!("loss weights must be non-negative: {self:?}")));
        }
        Ok(())
    }
}

/// Scalar values of the four loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub adv: f64,
    pub cyc: f64,
    pub shape: f64,
    pub loc: f64,
}

/// `L_adv + l_cyc L_cyc + l_shape L_shape + l_loc L_loc`.
pub fn total_loss(c: &LossComponents, w: &LossWeights) -> f64 {
    c.adv + w.cyc * c.cyc + w.shape * c.shape + w.loc * c.loc
}

/// Graph version of [`total_loss`].
pub fn total_loss_tensor(adv: &Tensor, cyc: &Tensor, shape: &Tensor, loc: &Tensor, w: &LossWeights) -> Result<Tensor> {
    Ok((adv + (cyc * w.cyc)? + (shape * w.shape)? + (loc * w.loc)?)?)
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

fn check_probabilities(t: &Tensor, what: &str) -> Result<()> {
    let flat = t.flatten_all()?.to_dtype(DType::F64)?;
    let lo = scalar(&flat.min(0)?)?;
    let hi = scalar(&flat.max(0)?)?;
    if !(lo >= 0.0 && hi <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "{what}: discriminator outputs must lie in [0, 1], got [{lo}, {hi}]"
        )));
    }
    Ok(())
}

fn log_clamped(t: &Tensor) -> Result<Tensor> {
    Ok(t.clamp(PROB_EPS, 1.0 - PROB_EPS)?.log()?)
}

/// Discriminator objective for one domain:
/// `-mean(log D(real)) - mean(log(1 - D(fake)))`.
pub fn adversarial_loss(d_real: &Tensor, d_fake: &Tensor) -> Result<Tensor> {
    check_probabilities(d_real, "d_real")?;
    check_probabilities(d_fake, "d_fake")?;
    let real = log_clamped(d_real)?.mean_all()?;
    let fake = log_clamped(&d_fake.affine(-1.0, 1.0)?)?.mean_all()?;
    Ok((real + fake)?.neg()?)
}

/// Non-saturating generator objective: `-mean(log D(fake))`.
pub fn generator_adversarial_loss(d_fake: &Tensor) -> Result<Tensor> {
    check_probabilities(d_fake, "d_fake")?;
    Ok(log_clamped(d_fake)?.mean_all()?.neg()?)
}

/// Mean absolute reconstruction error, summed over both translation directions.
pub fn cycle_loss(x_a: &Tensor, x_a_rec: &Tensor, x_b: &Tensor, x_b_rec: &Tensor) -> Result<Tensor> {
    same_shape(x_a, x_a_rec, "cycle A")?;
    same_shape(x_b, x_b_rec, "cycle B")?;
    let a = (x_a_rec - x_a)?.abs()?.mean_all()?;
    let b = (x_b_rec - x_b)?.abs()?.mean_all()?;
    Ok((a + b)?)
}

/// Mean squared difference of penultimate attention features,
/// `1/(C W H) * sum (f_src - f_pseudo)^2` (averaged over the batch).
pub fn tumor_shape_loss(feat_source: &Tensor, feat_pseudo: &Tensor) -> Result<Tensor> {
    same_shape(feat_source, feat_pseudo, "tumor shape")?;
    Ok((feat_source - feat_pseudo)?.sqr()?.mean_all()?)
}

/// `1 - (2 sum(p y) + s) / (sum p + sum y + s)` over all elements.
pub fn soft_dice_loss(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    same_shape(pred, target, "dice")?;
    let inter = (pred * target)?.sum_all()?;
    let denom = ((pred.sum_all()? + target.sum_all()?)? + DICE_SMOOTH)?;
    let ratio = ((inter * 2.0)? + DICE_SMOOTH)?.div(&denom)?;
    Ok(ratio.affine(-1.0, 1.0)?)
}

/// Both attention branches must reproduce the source label.
pub fn tumor_location_loss(pred_source: &Tensor, pred_pseudo: &Tensor, y_source: &Tensor) -> Result<Tensor> {
    same_shape(pred_source, y_source, "tumor location (source)")?;
    same_shape(pred_pseudo, y_source, "tumor location (pseudo)")?;
    Ok((soft_dice_loss(pred_pseudo, y_source)? + soft_dice_loss(pred_source, y_source)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn full(v: f64, shape: &[usize]) -> Tensor {
        (Tensor::ones(shape, DType::F64, &Device::Cpu).unwrap() * v).unwrap()
    }

    #[test]
    fn adversarial_at_half() {
        let half = full(0.5, &[1, 1, 3, 3]);
        let d = scalar(&adversarial_loss(&half, &half).unwrap()).unwrap();
        assert!((d - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        let g = scalar(&generator_adversarial_loss(&half).unwrap()).unwrap();
        assert!((g - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn adversarial_rejects_non_probabilities() {
        let bad = full(1.5, &[1, 1, 2, 2]);
        let ok = full(0.5, &[1, 1, 2, 2]);
        assert!(adversarial_loss(&ok, &bad).is_err());
        assert!(generator_adversarial_loss(&full(-0.1, &[2])).is_err());
    }

    #[test]
    fn clamping_keeps_extremes_finite() {
        let one = full(1.0, &[4]);
        let zero = full(0.0, &[4]);
        let d = scalar(&adversarial_loss(&zero, &one).unwrap()).unwrap();
        assert!(d.is_finite() && d > 30.0);
    }

    #[test]
    fn cycle_cases() {
        let x = full(0.3, &[1, 1, 4, 4]);
        assert_eq!(scalar(&cycle_loss(&x, &x, &x, &x).unwrap()).unwrap(), 0.0);
        let shifted = (&x + 0.1).unwrap();
        let v = scalar(&cycle_loss(&x, &shifted, &x, &x).unwrap()).unwrap();
        assert!((v - 0.1).abs() < 1e-12);
        assert!(cycle_loss(&x, &full(0.0, &[1, 1, 4, 2]), &x, &x).is_err());
    }

    #[test]
    fn shape_cases() {
        let a = full(0.0, &[1, 2, 3, 3]);
        let b = full(1.0, &[1, 2, 3, 3]);
        assert_eq!(scalar(&tumor_shape_loss(&a, &a).unwrap()).unwrap(), 0.0);
        assert_eq!(scalar(&tumor_shape_loss(&a, &b).unwrap()).unwrap(), 1.0);
        assert!(tumor_shape_loss(&a, &full(0.0, &[1, 3, 3, 3])).is_err());
    }

    #[test]
    fn location_cases() {
        // 16x16 map, 256 px mask all foreground
        let y = full(1.0, &[1, 1, 16, 16]);
        let v = scalar(&tumor_location_loss(&y, &y, &y).unwrap()).unwrap();
        assert!(v <= 1e-3, "{v}");
        // 100-pixel target, empty predictions: 2 * (1 - 1/101)
        let mut data = vec![0.0f64; 400];
        data[..100].iter_mut().for_each(|v| *v = 1.0);
        let y = Tensor::from_vec(data, (1, 1, 20, 20), &Device::Cpu).unwrap();
        let z = full(0.0, &[1, 1, 20, 20]);
        let v = scalar(&tumor_location_loss(&z, &z, &y).unwrap()).unwrap();
        assert!((v - 2.0 * (1.0 - 1.0 / 101.0)).abs() < 1e-12);
    }

    #[test]
    fn total_combines_linearly() {
        let c = LossComponents {
            adv: 1.0,
            cyc: 1.0,
            shape: 1.0,
            loc: 1.0,
        };
        assert_eq!(total_loss(&c, &LossWeights::default()), 17.0);
        let zero = LossWeights {
            cyc: 0.0,
            shape: 0.0,
            loc: 0.0,
        };
        assert_eq!(total_loss(&c, &zero), 1.0);
        let c = LossComponents {
            adv: 0.7,
            cyc: 0.3,
            shape: 0.2,
            loc: 0.9,
        };
        let w = LossWeights::default();
        let doubled = LossWeights { cyc: 2.0 * w.cyc, ..w };
        let delta = total_loss(&c, &doubled) - total_loss(&c, &w);
        assert!((delta - c.cyc * w.cyc).abs() < 1e-12);
    }
}
