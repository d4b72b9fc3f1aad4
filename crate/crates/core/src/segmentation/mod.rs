//! Step 2: tumor segmentation networks trained on real plus pseudo target-domain images.

mod nets;
mod train;

pub use train::{train_segmenter, validation_dsc, BatchSampler, EpochRecord, SegTrainConfig, TrainOutcome};

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use candle_core::{DType, Tensor};
use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{stack_images, unstack_images, Checkpoint, CheckpointGroup, ParamBuilder, ParamStore, Precision};
use crate::phantom::{reflect_pad_to, Image, Mask};
use nets::{DenseFcn, ResidualFcn, UnetBn};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SegKind {
    #[serde(rename = "unet")]
    UnetBn,
    #[serde(rename = "resfcn")]
    ResidualFcn,
    #[serde(rename = "densefcn")]
    DenseFcn,
}

impl SegKind {
    pub const ALL: [SegKind; 3] = [SegKind::UnetBn, SegKind::ResidualFcn, SegKind::DenseFcn];

    pub fn name(self) -> &'static str {
        match self {
            SegKind::UnetBn => "unet",
            SegKind::ResidualFcn => "resfcn",
            SegKind::DenseFcn => "densefcn",
        }
    }
}

impl fmt::Display for SegKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SegKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unet" | "unet_bn" => Ok(SegKind::UnetBn),
            "resfcn" | "residual_fcn" => Ok(SegKind::ResidualFcn),
            "densefcn" | "dense_fcn" => Ok(SegKind::DenseFcn),
            other => Err(Error::InvalidInput(format!(
                "unknown architecture `{other}` (expected unet, resfcn or densefcn)"
            ))),
        }
    }
}

/// Architecture choice plus its size knobs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegArchitecture {
    pub kind: SegKind,
    /// Multiplies every channel width of the full-size network.
    pub width: f64,
    pub precision: Precision,
}

impl SegArchitecture {
    pub fn new(kind: SegKind, width: f64) -> Self {
        Self {
            kind,
            width,
            precision: Precision::F32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.width <= 4.0) {
            return Err(Error::Config(format!("width multiplier {} out of (0, 4]", self.width)));
        }
        Ok(())
    }

    /// Spatial sizes must be multiples of this factor.
    pub fn size_factor(&self) -> usize {
        16
    }
}

#[derive(Clone, Debug)]
enum Net {
    Unet(UnetBn),
    Residual(ResidualFcn),
    Dense(DenseFcn),
}

/// A segmentation network with its parameters.
#[derive(Clone, Debug)]
pub struct SegModel {
    pub arch: SegArchitecture,
    pub params: ParamStore,
    /// Training-data composition this model was fit on, once trained.
    pub regime: Option<String>,
    net: Net,
}

/// Builds a model with weights drawn deterministically from `seed`.
pub fn build_model(arch: SegArchitecture, seed: u64) -> Result<SegModel> {
    arch.validate()?;
    let pb = ParamBuilder::new(seed, arch.precision.dtype());
    let root = pb.pp(arch.kind.name());
    let net = match arch.kind {
        SegKind::UnetBn => Net::Unet(UnetBn::new(&root, arch.width)?),
        SegKind::ResidualFcn => Net::Residual(ResidualFcn::new(&root, arch.width)?),
        SegKind::DenseFcn => Net::Dense(DenseFcn::new(&root, arch.width)?),
    };
    Ok(SegModel {
        arch,
        params: pb.finish(),
        regime: None,
        net,
    })
}

impl SegModel {
    pub fn dtype(&self) -> DType {
        self.arch.precision.dtype()
    }

    /// Probability map `(N, 1, H, W)` for a batch `(N, 1, H, W)`. `train`
    /// selects batch statistics (and updates the running averages).
    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        let f = self.arch.size_factor();
        if c != 1 || h % f != 0 || w % f != 0 {
            return Err(Error::Shape(format!(
                "segmenter input must be (N, 1, H, W) with H, W multiples of {f}, got {:?}",
                x.dims()
            )));
        }
        match &self.net {
            Net::Unet(n) => n.forward(x, train),
            Net::Residual(n) => n.forward(x, train),
            Net::Dense(n) => n.forward(x, train),
        }
    }

    /// Per-resolution maps summed by the residual FCN; `None` for other kinds.
    pub fn fusion_inputs(&self, x: &Tensor) -> Result<Option<Vec<Tensor>>> {
        match &self.net {
            Net::Residual(n) => Ok(Some(n.fusion_inputs(x, false)?)),
            _ => Ok(None),
        }
    }

    /// Probability map for one image of any size (reflect-padded to the
    /// size factor, then cropped back).
    pub fn predict_probability(&self, image: &Image) -> Result<Array2<f32>> {
        let (h, w) = image.dim();
        let f = self.arch.size_factor();
        let (padded, (r0, c0)) = reflect_pad_to(image, h.div_ceil(f) * f, w.div_ceil(f) * f);
        let x = stack_images([&padded], self.dtype())?;
        let p = unstack_images(&self.forward(&x, false)?)?.remove(0);
        Ok(p.slice(s![r0..r0 + h, c0..c0 + w]).to_owned())
    }

    pub fn save(&self, path: &Path, extra: &BTreeMap<String, String>) -> Result<()> {
        let mut meta = extra.clone();
        meta.insert("seg_architecture".into(), serde_json::to_string(&self.arch)?);
        if let Some(r) = &self.regime {
            meta.insert("regime".into(), r.clone());
        }
        let group = CheckpointGroup {
            name: "segmenter",
            params: &self.params,
            optimizer: None,
        };
        Checkpoint::save(path, &[group], &meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        let arch: SegArchitecture = serde_json::from_str(
            ck.meta("seg_architecture")
                .ok_or_else(|| Error::Checkpoint("not a segmentation checkpoint".into()))?,
        )?;
        let mut model = build_model(arch, 0)?;
        ck.restore_params("segmenter", &model.params)?;
        model.regime = ck.meta("regime").map(str::to_string);
        Ok(model)
    }
}

/// `1 - soft Dice` with unit smoothing.
pub fn dice_loss(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    crate::synthesis::soft_dice_loss(pred, target)
}

/// Binary mask of pixels with probability at least 0.5.
pub fn threshold(prob: &Array2<f32>) -> Mask {
    prob.mapv(|p| u8::from(p >= 0.5))
}

/// Thresholded prediction, same shape as the input image.
pub fn predict_mask(model: &SegModel, image: &Image) -> Result<Mask> {
    Ok(threshold(&model.predict_probability(image)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(kind: SegKind) -> SegModel {
        build_model(SegArchitecture::new(kind, 0.0625), 3).unwrap()
    }

    #[test]
    fn shape_and_range_contract() {
        for kind in SegKind::ALL {
            let m = tiny(kind);
            let img = Image::from_shape_fn((32, 48), |(r, c)| ((r * 7 + c * 3) % 11) as f32 / 5.5 - 1.0);
            let p = m.predict_probability(&img).unwrap();
            assert_eq!(p.dim(), (32, 48), "{kind}");
            assert!(p.iter().all(|v| (0.0..=1.0).contains(v)), "{kind}");
            // non-multiple sizes are padded and cropped
            let odd = Image::zeros((37, 21));
            assert_eq!(predict_mask(&m, &odd).unwrap().dim(), (37, 21));
        }
    }

    #[test]
    fn residual_fusion_maps_align() {
        let m = tiny(SegKind::ResidualFcn);
        let x = stack_images([&Image::zeros((64, 64))], DType::F32).unwrap();
        let taps = m.fusion_inputs(&x).unwrap().unwrap();
        assert_eq!(taps.len(), 3);
        assert!(taps.iter().all(|t| t.dims() == taps[0].dims()));
        assert_eq!(&taps[0].dims()[2..], &[16, 16]);
    }

    #[test]
    fn same_seed_same_parameters() {
        for kind in SegKind::ALL {
            let a = build_model(SegArchitecture::new(kind, 0.0625), 9).unwrap();
            let b = build_model(SegArchitecture::new(kind, 0.0625), 9).unwrap();
            assert_eq!(a.params.fingerprint(false).unwrap(), b.params.fingerprint(false).unwrap());
        }
    }

    #[test]
    fn threshold_constant_map() {
        let m = threshold(&Array2::from_elem((4, 5), 0.6));
        assert!(m.iter().all(|&v| v == 1));
        let m = threshold(&Array2::from_elem((4, 5), 0.4));
        assert!(m.iter().all(|&v| v == 0));
    }

    #[test]
    fn kind_names_round_trip() {
        for k in SegKind::ALL {
            assert_eq!(k.name().parse::<SegKind>().unwrap(), k);
        }
        assert!("vnet".parse::<SegKind>().is_err());
    }
}
