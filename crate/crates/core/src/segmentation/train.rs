use std::path::Path;

use candle_core::{DType, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{dice_loss, predict_mask, SegModel};
use crate::error::{Error, IoContext, Result};
use crate::metrics::dsc;
use crate::nn::{scalar, stack_images, Adam, AdamConfig};
use crate::phantom::{augment, Augmentation, Sample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegTrainConfig {
    /// Total optimizer steps (upper bound; early stopping may end sooner).
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    /// Steps between validation passes; one "epoch" of the history.
    pub epoch_steps: u64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub augment: bool,
    pub seed: u64,
}

impl Default for SegTrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 10,
            lr: 1e-4,
            epoch_steps: 20,
            patience: 20,
            augment: true,
            seed: 11,
        }
    }
}

impl SegTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epoch_steps == 0 {
            return Err(Error::Config("batch_size and epoch_steps must be positive".into()));
        }
        if !(self.lr >= 0.0) {
            return Err(Error::Config(format!("learning rate must be non-negative, got {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: u64,
    pub train_loss: f64,
    pub val_dsc: f64,
}

pub struct TrainOutcome {
    /// Parameters from the epoch with the highest validation DSC.
    pub model: SegModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_dsc: f64,
    pub stopped_early: bool,
}

impl TrainOutcome {
    pub fn write_history(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.history {
            w.serialize(r)?;
        }
        w.flush().at(path)?;
        Ok(())
    }
}

/// Uniform sampling with replacement over a labeled pool.
pub struct BatchSampler<'a> {
    pool: &'a [Sample],
    batch: usize,
    augment: bool,
    rng: ChaCha8Rng,
    dtype: DType,
}

impl<'a> BatchSampler<'a> {
    pub fn new(pool: &'a [Sample], batch: usize, augment: bool, seed: u64, dtype: DType) -> Result<Self> {
        if pool.is_empty() {
            return Err(Error::Dataset("empty training set".into()));
        }
        if let Some(s) = pool.iter().find(|s| s.mask.is_none()) {
            return Err(Error::Dataset(format!("training sample `{}` has no mask", s.id)));
        }
        if pool.iter().any(|s| s.shape() != pool[0].shape()) {
            return Err(Error::Dataset("training images must share one shape".into()));
        }
        Ok(Self {
            pool,
            batch,
            augment,
            rng: ChaCha8Rng::seed_from_u64(seed),
            dtype,
        })
    }

    /// `(images, masks)`, both `(batch, 1, H, W)`.
    pub fn next_batch(&mut self) -> Result<(Tensor, Tensor)> {
        let mut picked = Vec::with_capacity(self.batch);
        for _ in 0..self.batch {
            let s = &self.pool[self.rng.random_range(0..self.pool.len())];
            picked.push(if self.augment {
                let op = Augmentation {
                    rotate_deg: self.rng.random_range(-15.0..15.0),
                    stretch: (self.rng.random_range(0.9..1.1), self.rng.random_range(0.9..1.1)),
                };
                augment(s, op)?
            } else {
                s.clone()
            });
        }
        let x = stack_images(picked.iter().map(|s| &s.image), self.dtype)?;
        let y = stack_images(picked.iter().map(|s| s.mask.as_ref().expect("checked")), self.dtype)?;
        Ok((x, y))
    }
}

/// Mean per-sample DSC of thresholded predictions.
pub fn validation_dsc(model: &SegModel, val: &[Sample]) -> Result<f64> {
    let mut total = 0.0;
    for s in val {
        let gt = s
            .mask
            .as_ref()
            .ok_or_else(|| Error::Dataset(format!("validation sample `{}` has no mask", s.id)))?;
        total += dsc(&predict_mask(model, &s.image)?, gt)?;
    }
    Ok(total / val.len() as f64)
}

/// Dice-loss training with Adam, keeping the parameters of the best
/// validation epoch.
pub fn train_segmenter(model: SegModel, train: &[Sample], val: &[Sample], cfg: &SegTrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if val.is_empty() {
        return Err(Error::Dataset("empty validation set".into()));
    }
    let mut sampler = BatchSampler::new(train, cfg.batch_size, cfg.augment, cfg.seed, model.dtype())?;
    let mut opt = Adam::new(
        model.params.trainable(),
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    )?;
    let mut history = Vec::new();
    let mut best = (f64::NEG_INFINITY, 0usize, model.params.snapshot()?);
    let mut since_best = 0;
    let mut loss_sum = 0.0;
    let mut stopped_early = false;
    for step in 1..=cfg.steps {
        let (x, y) = sampler.next_batch()?;
        let loss = dice_loss(&model.forward(&x, true)?, &y)?;
        let value = scalar(&loss)?;
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss {
                name: "dice",
                value,
                iteration: step,
            });
        }
        opt.step(&loss.backward()?)?;
        loss_sum += value;
        if step % cfg.epoch_steps == 0 || step == cfg.steps {
            let epoch = history.len() + 1;
            let n = step - history.last().map_or(0, |r: &EpochRecord| r.step);
            let val_dsc = validation_dsc(&model, val)?;
            history.push(EpochRecord {
                epoch,
                step,
                train_loss: loss_sum / n as f64,
                val_dsc,
            });
            log::debug!("epoch {epoch} step {step} loss {:.4} val dsc {val_dsc:.4}", loss_sum / n as f64);
            loss_sum = 0.0;
            if val_dsc > best.0 {
                best = (val_dsc, epoch, model.params.snapshot()?);
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    stopped_early = step < cfg.steps;
                    break;
                }
            }
        }
    }
    if history.is_empty() {
        return Err(Error::Config("step budget of zero: nothing was trained".into()));
    }
    model.params.restore(&best.2)?;
    Ok(TrainOutcome {
        model,
        history,
        best_epoch: best.1,
        best_val_dsc: best.0,
        stopped_early,
    })
}
