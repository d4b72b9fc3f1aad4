use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::losses::{
    adversarial_loss, cycle_loss, generator_adversarial_loss, total_loss, tumor_location_loss, tumor_shape_loss,
    LossComponents, LossWeights,
};
use super::networks::{AttentionPair, NetworkSpec, SequentialNet};
use crate::error::{Error, Result};
use crate::nn::{scalar, stack_images, unstack_images, Adam, AdamConfig, Checkpoint, CheckpointGroup, Init, ParamBuilder, ParamStore, Precision};
use crate::phantom::{augment, derive_seed, Augmentation, Image, Sample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisConfig {
    /// Channel count of the generator stem; doubles at each downsampling.
    pub generator_base: usize,
    pub residual_blocks: usize,
    pub discriminator_widths: [usize; 4],
    pub attention_widths: [usize; 5],
    pub weights: LossWeights,
    pub lr: f64,
    /// Learning rate of the attention networks; `lr` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention_lr: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub steps: u64,
    /// Random rotation/stretch of each training pair.
    pub augment: bool,
    pub precision: Precision,
    pub seed: u64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            generator_base: 64,
            residual_blocks: 9,
            discriminator_widths: [64, 128, 256, 512],
            attention_widths: [32, 64, 128, 256, 512],
            weights: LossWeights::default(),
            lr: 1e-4,
            attention_lr: None,
            beta1: 0.5,
            beta2: 0.999,
            steps: 5000,
            augment: true,
            precision: Precision::F32,
            seed: 1,
        }
    }
}

impl SynthesisConfig {
    /// Reduced widths for CPU-scale runs.
    pub fn desk() -> Self {
        Self {
            generator_base: 8,
            discriminator_widths: [8, 16, 32, 64],
            attention_widths: [8, 16, 32, 64, 128],
            attention_lr: Some(1e-3),
            steps: 2000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.generator_base == 0
            || self.discriminator_widths.contains(&0)
            || self.attention_widths.contains(&0)
        {
            return Err(Error::Config("network widths must be positive".into()));
        }
        for lr in [Some(self.lr), self.attention_lr].into_iter().flatten() {
            if !(lr >= 0.0) {
                return Err(Error::Config(format!("learning rate must be non-negative, got {lr}")));
            }
        }
        Ok(())
    }

    pub fn generator_spec(&self) -> NetworkSpec {
        NetworkSpec::generator(self.generator_base, self.residual_blocks)
    }

    pub fn discriminator_spec(&self) -> NetworkSpec {
        NetworkSpec::patch_discriminator(self.discriminator_widths)
    }

    pub fn attention_spec(&self) -> NetworkSpec {
        NetworkSpec::attention_unet(self.attention_widths)
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamConfig::default()
        }
    }
}

/// Per-step losses, in the order of the CSV log columns.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    #[serde(rename = "L_adv_D")]
    pub adv_d: f64,
    #[serde(rename = "L_adv_G")]
    pub adv_g: f64,
    #[serde(rename = "L_cyc")]
    pub cyc: f64,
    #[serde(rename = "L_shape")]
    pub shape: f64,
    #[serde(rename = "L_loc")]
    pub loc: f64,
    #[serde(rename = "L_total")]
    pub total: f64,
}

/// One labeled source image and one unlabeled target image, `(1, 1, H, W)` each.
#[derive(Clone, Debug)]
pub struct TrainPair {
    pub a: Tensor,
    pub a_mask: Tensor,
    pub b: Tensor,
}

impl TrainPair {
    pub fn from_arrays(a: &Image, a_mask: &crate::phantom::Mask, b: &Image, dtype: DType) -> Result<Self> {
        Ok(Self {
            a: stack_images([a], dtype)?,
            a_mask: stack_images([a_mask], dtype)?,
            b: stack_images([b], dtype)?,
        })
    }
}

/// Generators translating A->B and B->A.
#[derive(Clone, Debug)]
pub struct Generators {
    pub a_to_b: SequentialNet,
    pub b_to_a: SequentialNet,
}

/// Discriminators judging domain B and domain A images.
#[derive(Clone, Debug)]
pub struct Discriminators {
    pub b: SequentialNet,
    pub a: SequentialNet,
}

struct Forward {
    fake_b: Tensor,
    fake_a: Tensor,
    rec_a: Tensor,
    rec_b: Tensor,
}

/// Everything the translation training loop mutates: three disjoint
/// parameter groups, their optimizers, and the iteration counter.
pub struct SynthesisState {
    pub config: SynthesisConfig,
    pub generators: Generators,
    pub discriminators: Discriminators,
    pub attention: AttentionPair,
    pub params_g: ParamStore,
    pub params_d: ParamStore,
    pub params_t: ParamStore,
    opt_g: Adam,
    opt_d: Adam,
    opt_t: Adam,
    pub iteration: u64,
}

struct OptSnapshot {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

fn opt_snapshot(o: &Adam) -> OptSnapshot {
    OptSnapshot {
        m: o.m.clone(),
        v: o.v.clone(),
        step: o.step,
    }
}

impl SynthesisState {
    pub fn new(config: SynthesisConfig) -> Result<Self> {
        config.validate()?;
        let dtype = config.precision.dtype();
        let gan_init = Init::Normal(0.02);
        let pb_g = ParamBuilder::new(derive_seed(config.seed, &[1]), dtype);
        let gspec = config.generator_spec();
        let generators = Generators {
            a_to_b: SequentialNet::build(&pb_g.pp("a_to_b"), &gspec, gan_init)?,
            b_to_a: SequentialNet::build(&pb_g.pp("b_to_a"), &gspec, gan_init)?,
        };
        let pb_d = ParamBuilder::new(derive_seed(config.seed, &[2]), dtype);
        let dspec = config.discriminator_spec();
        let discriminators = Discriminators {
            b: SequentialNet::build(&pb_d.pp("d_b"), &dspec, gan_init)?,
            a: SequentialNet::build(&pb_d.pp("d_a"), &dspec, gan_init)?,
        };
        let pb_t = ParamBuilder::new(derive_seed(config.seed, &[3]), dtype);
        let attention = AttentionPair::build(&pb_t, &config.attention_spec(), Init::Kaiming)?;
        let (params_g, params_d, params_t) = (pb_g.finish(), pb_d.finish(), pb_t.finish());
        let adam = config.adam();
        Ok(Self {
            opt_g: Adam::new(params_g.trainable(), adam)?,
            opt_d: Adam::new(params_d.trainable(), adam)?,
            opt_t: Adam::new(
                params_t.trainable(),
                AdamConfig {
                    lr: config.attention_lr.unwrap_or(config.lr),
                    ..adam
                },
            )?,
            config,
            generators,
            discriminators,
            attention,
            params_g,
            params_d,
            params_t,
            iteration: 0,
        })
    }

    pub fn dtype(&self) -> DType {
        self.config.precision.dtype()
    }

    pub fn weights(&self) -> LossWeights {
        self.config.weights
    }

    /// Changes the learning rate of all three optimizers.
    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.lr = lr;
        self.config.attention_lr = None;
        for o in [&mut self.opt_g, &mut self.opt_d, &mut self.opt_t] {
            o.config.lr = lr;
        }
    }

    fn translate_all(&self, pair: &TrainPair) -> Result<Forward> {
        let fake_b = self.generators.a_to_b.forward(&pair.a)?;
        let rec_a = self.generators.b_to_a.forward(&fake_b)?;
        let fake_a = self.generators.b_to_a.forward(&pair.b)?;
        let rec_b = self.generators.a_to_b.forward(&fake_a)?;
        Ok(Forward {
            fake_b,
            fake_a,
            rec_a,
            rec_b,
        })
    }

    /// Shape and location terms for a given pseudo-B image.
    pub fn attention_losses(&self, a: &Tensor, a_mask: &Tensor, fake_b: &Tensor) -> Result<(Tensor, Tensor)> {
        let src = self.attention.forward_source(a)?;
        let pse = self.attention.forward_pseudo(fake_b)?;
        let shape = tumor_shape_loss(&src.features, &pse.features)?;
        let loc = tumor_location_loss(&src.probability, &pse.probability, a_mask)?;
        Ok((shape, loc))
    }

    /// Generator objective and its components, as graph tensors.
    pub fn generator_objective(&self, pair: &TrainPair) -> Result<(Tensor, LossComponents)> {
        let w = self.weights();
        let f = self.translate_all(pair)?;
        let adv = (generator_adversarial_loss(&self.discriminators.b.forward(&f.fake_b)?)?
            + generator_adversarial_loss(&self.discriminators.a.forward(&f.fake_a)?)?)?;
        let cyc = cycle_loss(&pair.a, &f.rec_a, &pair.b, &f.rec_b)?;
        let (shape, loc) = if w.uses_attention() {
            self.attention_losses(&pair.a, &pair.a_mask, &f.fake_b)?
        } else {
            // tracked for the log only; no gradient reaches any group
            let (s, l) = self.attention_losses(&pair.a, &pair.a_mask, &f.fake_b.detach())?;
            (s.detach(), l.detach())
        };
        let comps = LossComponents {
            adv: scalar(&adv)?,
            cyc: scalar(&cyc)?,
            shape: scalar(&shape)?,
            loc: scalar(&loc)?,
        };
        let total = (adv + (cyc * w.cyc)? + (shape * w.shape)? + (loc * w.loc)?)?;
        Ok((total, comps))
    }

    /// Discriminator objective on freshly translated (detached) fakes.
    pub fn discriminator_objective(&self, pair: &TrainPair) -> Result<Tensor> {
        let fake_b = self.generators.a_to_b.forward(&pair.a)?.detach();
        let fake_a = self.generators.b_to_a.forward(&pair.b)?.detach();
        let d = &self.discriminators;
        Ok((adversarial_loss(&d.b.forward(&pair.b)?, &d.b.forward(&fake_b)?)?
            + adversarial_loss(&d.a.forward(&pair.a)?, &d.a.forward(&fake_a)?)?)?)
    }

    /// Attention objective `l_shape L_shape + l_loc L_loc` with the generator output detached.
    pub fn attention_objective(&self, pair: &TrainPair) -> Result<(Tensor, f64, f64)> {
        let w = self.weights();
        let fake_b = self.generators.a_to_b.forward(&pair.a)?.detach();
        let (shape, loc) = self.attention_losses(&pair.a, &pair.a_mask, &fake_b)?;
        let (s, l) = (scalar(&shape)?, scalar(&loc)?);
        Ok((((shape * w.shape)? + (loc * w.loc)?)?, s, l))
    }

    fn check_finite(&self, name: &'static str, value: f64) -> Result<()> {
        if value.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFiniteLoss {
                name,
                value,
                iteration: self.iteration,
            })
        }
    }

    /// Sub-update (i): generators only.
    pub fn update_generators(&mut self, pair: &TrainPair) -> Result<LossComponents> {
        let (objective, comps) = self.generator_objective(pair)?;
        self.check_finite("generator total", scalar(&objective)?)?;
        let grads = objective.backward()?;
        self.opt_g.step(&grads)?;
        Ok(comps)
    }

    /// Sub-update (ii): discriminators only.
    pub fn update_discriminators(&mut self, pair: &TrainPair) -> Result<f64> {
        let objective = self.discriminator_objective(pair)?;
        let value = scalar(&objective)?;
        self.check_finite("discriminator adversarial", value)?;
        let grads = objective.backward()?;
        self.opt_d.step(&grads)?;
        Ok(value)
    }

    /// Sub-update (iii): attention networks only. Skipped when both
    /// attention weights are zero (the objective is identically zero).
    pub fn update_attention(&mut self, pair: &TrainPair) -> Result<(f64, f64)> {
        let (objective, shape, loc) = self.attention_objective(pair)?;
        self.check_finite("attention", scalar(&objective)?)?;
        if self.weights().uses_attention() {
            let grads = objective.backward()?;
            self.opt_t.step(&grads)?;
        }
        Ok((shape, loc))
    }

    /// One iteration of the three sequential sub-updates. On a non-finite
    /// loss every parameter and optimizer moment is rolled back.
    pub fn train_step(&mut self, pair: &TrainPair) -> Result<LossRecord> {
        let params = [
            self.params_g.snapshot()?,
            self.params_d.snapshot()?,
            self.params_t.snapshot()?,
        ];
        let opts = [opt_snapshot(&self.opt_g), opt_snapshot(&self.opt_d), opt_snapshot(&self.opt_t)];
        match self.train_step_inner(pair) {
            Ok(rec) => Ok(rec),
            Err(e) => {
                self.params_g.restore(&params[0])?;
                self.params_d.restore(&params[1])?;
                self.params_t.restore(&params[2])?;
                for (o, s) in [&mut self.opt_g, &mut self.opt_d, &mut self.opt_t].into_iter().zip(opts) {
                    o.m = s.m;
                    o.v = s.v;
                    o.step = s.step;
                }
                Err(e)
            }
        }
    }

    fn train_step_inner(&mut self, pair: &TrainPair) -> Result<LossRecord> {
        let comps = self.update_generators(pair)?;
        let adv_d = self.update_discriminators(pair)?;
        self.update_attention(pair)?;
        self.iteration += 1;
        Ok(LossRecord {
            step: self.iteration,
            adv_d,
            adv_g: comps.adv,
            cyc: comps.cyc,
            shape: comps.shape,
            loc: comps.loc,
            total: total_loss(&comps, &self.weights()),
        })
    }

    /// Translates normalized domain-A images into pseudo domain-B images.
    pub fn translate_a_to_b(&self, images: &[&Image]) -> Result<Vec<Image>> {
        let mut out = Vec::with_capacity(images.len());
        for img in images {
            let x = stack_images([*img], self.dtype())?;
            out.extend(unstack_images(&self.generators.a_to_b.forward(&x)?.detach())?);
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path, config_hash: &str) -> Result<()> {
        let meta = BTreeMap::from([
            ("iteration".to_string(), self.iteration.to_string()),
            ("config_hash".to_string(), config_hash.to_string()),
            ("synthesis_config".to_string(), serde_json::to_string(&self.config)?),
        ]);
        let groups = [
            CheckpointGroup {
                name: "generators",
                params: &self.params_g,
                optimizer: Some(&self.opt_g),
            },
            CheckpointGroup {
                name: "discriminators",
                params: &self.params_d,
                optimizer: Some(&self.opt_d),
            },
            CheckpointGroup {
                name: "attention",
                params: &self.params_t,
                optimizer: Some(&self.opt_t),
            },
        ];
        Checkpoint::save(path, &groups, &meta)
    }

    /// Rebuilds the state recorded in a checkpoint.
    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        let config: SynthesisConfig = serde_json::from_str(
            ck.meta("synthesis_config")
                .ok_or_else(|| Error::Checkpoint("not a synthesis checkpoint".into()))?,
        )?;
        let mut state = Self::new(config)?;
        ck.restore_params("generators", &state.params_g)?;
        ck.restore_params("discriminators", &state.params_d)?;
        ck.restore_params("attention", &state.params_t)?;
        ck.restore_optimizer("generators", &mut state.opt_g)?;
        ck.restore_optimizer("discriminators", &mut state.opt_d)?;
        ck.restore_optimizer("attention", &mut state.opt_t)?;
        state.iteration = ck
            .meta("iteration")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Checkpoint("missing iteration".into()))?;
        Ok(state)
    }
}

/// Random source/target pairing with optional geometric augmentation.
pub struct PairSampler<'a> {
    a: &'a [Sample],
    b: &'a [Sample],
    augment: bool,
    rng: ChaCha8Rng,
    dtype: DType,
}

impl<'a> PairSampler<'a> {
    pub fn new(a: &'a [Sample], b: &'a [Sample], augment: bool, seed: u64, dtype: DType) -> Result<Self> {
        if a.is_empty() || b.is_empty() {
            return Err(Error::Dataset("both domains need at least one training image".into()));
        }
        if let Some(s) = a.iter().find(|s| s.mask.is_none()) {
            return Err(Error::Dataset(format!("domain-A sample `{}` has no mask", s.id)));
        }
        Ok(Self {
            a,
            b,
            augment,
            rng: ChaCha8Rng::seed_from_u64(seed),
            dtype,
        })
    }

    fn jitter(&mut self, s: &Sample) -> Result<Sample> {
        if !self.augment {
            return Ok(s.clone());
        }
        let op = Augmentation {
            rotate_deg: self.rng.random_range(-15.0..15.0),
            stretch: (self.rng.random_range(0.9..1.1), self.rng.random_range(0.9..1.1)),
        };
        augment(s, op)
    }

    pub fn next_pair(&mut self) -> Result<TrainPair> {
        let ia = self.rng.random_range(0..self.a.len());
        let ib = self.rng.random_range(0..self.b.len());
        let a = self.jitter(&self.a[ia])?;
        let b = self.jitter(&self.b[ib])?;
        TrainPair::from_arrays(&a.image, a.mask.as_ref().expect("checked"), &b.image, self.dtype)
    }
}

/// Runs `steps` iterations, reporting each record to `on_step`.
pub fn train_synthesis(
    state: &mut SynthesisState,
    a: &[Sample],
    b: &[Sample],
    steps: u64,
    mut on_step: impl FnMut(&LossRecord),
) -> Result<Vec<LossRecord>> {
    let seed = derive_seed(state.config.seed, &[4, state.iteration]);
    let mut sampler = PairSampler::new(a, b, state.config.augment, seed, state.dtype())?;
    let mut records = Vec::with_capacity(steps as usize);
    for _ in 0..steps {
        let pair = sampler.next_pair()?;
        let rec = state.train_step(&pair)?;
        on_step(&rec);
        records.push(rec);
    }
    Ok(records)
}
