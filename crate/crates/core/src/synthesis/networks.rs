//! Architecture descriptions and the networks built from them: the
//! residual-block generator, the PatchGAN discriminator, and the pair of
//! tumor-attention U-Nets whose last two stages are one shared module.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{instance_norm, leaky_relu, sigmoid, Conv2d, ConvTranspose2d, Init, ParamBuilder};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkKind {
    Generator,
    PatchDiscriminator,
    AttentionUnet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    None,
    Instance,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu(f64),
    /// `tanh` scaled just inside `(-1, 1)` so saturation never reaches the bounds.
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply(self, x: &Tensor) -> Result<Tensor> {
        Ok(match self {
            Activation::Identity => x.clone(),
            Activation::Relu => x.relu()?,
            Activation::LeakyRelu(s) => leaky_relu(x, s)?,
            Activation::Tanh => (x.tanh()? * (1.0 - 1e-6))?,
            Activation::Sigmoid => sigmoid(x)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageOp {
    Conv { kernel: usize, stride: usize },
    /// Two 3x3 convolutions with an identity shortcut.
    Residual,
    /// Fractionally strided convolution doubling the spatial size, optionally
    /// followed by concatenation with the named encoder stage's output.
    Deconv { skip_from: Option<String> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub name: String,
    pub op: StageOp,
    pub in_channels: usize,
    pub out_channels: usize,
    pub norm: Norm,
    pub activation: Activation,
}

impl StageSpec {
    fn new(name: impl Into<String>, op: StageOp, io: (usize, usize), norm: Norm, activation: Activation) -> Self {
        Self {
            name: name.into(),
            op,
            in_channels: io.0,
            out_channels: io.1,
            norm,
            activation,
        }
    }

    pub fn is_downsampling(&self) -> bool {
        matches!(self.op, StageOp::Conv { stride: 2, .. })
    }

    pub fn is_upsampling(&self) -> bool {
        matches!(self.op, StageOp::Deconv { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub kind: NetworkKind,
    pub stages: Vec<StageSpec>,
    /// Stages (by name) whose parameters are shared between the two
    /// attention branches. Empty for other kinds.
    pub shared_stages: Vec<String>,
}

impl NetworkSpec {
    /// `c7s1-k, d2k, d4k, R4k x blocks, u2k, uk, c7s1-1` with a tanh head.
    pub fn generator(base: usize, residual_blocks: usize) -> Self {
        let k = base;
        let inorm = Norm::Instance;
        let relu = Activation::Relu;
        let mut stages = vec![
            StageSpec::new("stem", StageOp::Conv { kernel: 7, stride: 1 }, (1, k), inorm, relu),
            StageSpec::new("down1", StageOp::Conv { kernel: 3, stride: 2 }, (k, 2 * k), inorm, relu),
            StageSpec::new("down2", StageOp::Conv { kernel: 3, stride: 2 }, (2 * k, 4 * k), inorm, relu),
        ];
        for i in 0..residual_blocks {
            stages.push(StageSpec::new(
                format!("res{}", i + 1),
                StageOp::Residual,
                (4 * k, 4 * k),
                inorm,
                Activation::Identity,
            ));
        }
        stages.push(StageSpec::new("up1", StageOp::Deconv { skip_from: None }, (4 * k, 2 * k), inorm, relu));
        stages.push(StageSpec::new("up2", StageOp::Deconv { skip_from: None }, (2 * k, k), inorm, relu));
        stages.push(StageSpec::new(
            "head",
            StageOp::Conv { kernel: 7, stride: 1 },
            (k, 1),
            Norm::None,
            Activation::Tanh,
        ));
        Self {
            kind: NetworkKind::Generator,
            stages,
            shared_stages: vec![],
        }
    }

    /// Four stride-2 4x4 convolutions, then a 3x3 projection to a one-channel
    /// sigmoid patch map.
    pub fn patch_discriminator(widths: [usize; 4]) -> Self {
        let lrelu = Activation::LeakyRelu(0.2);
        let mut stages = Vec::new();
        let mut prev = 1;
        for (i, &w) in widths.iter().enumerate() {
            let norm = if i == 0 { Norm::None } else { Norm::Instance };
            stages.push(StageSpec::new(
                format!("c{}", i + 1),
                StageOp::Conv { kernel: 4, stride: 2 },
                (prev, w),
                norm,
                lrelu,
            ));
            prev = w;
        }
        stages.push(StageSpec::new(
            "head",
            StageOp::Conv { kernel: 3, stride: 1 },
            (prev, 1),
            Norm::None,
            Activation::Sigmoid,
        ));
        Self {
            kind: NetworkKind::PatchDiscriminator,
            stages,
            shared_stages: vec![],
        }
    }

    /// Five stride-2 encoder convolutions and five x2 deconvolutions with
    /// concatenated skips; the last deconvolution and the 1x1 sigmoid head are shared.
    pub fn attention_unet(widths: [usize; 5]) -> Self {
        let lrelu = Activation::LeakyRelu(0.2);
        let relu = Activation::Relu;
        let mut stages = Vec::new();
        let mut prev = 1;
        for (i, &w) in widths.iter().enumerate() {
            stages.push(StageSpec::new(
                format!("enc{}", i + 1),
                StageOp::Conv { kernel: 4, stride: 2 },
                (prev, w),
                if i == 0 { Norm::None } else { Norm::Instance },
                lrelu,
            ));
            prev = w;
        }
        // dec5..dec2 upsample and concatenate enc4..enc1; dec1 returns to full resolution.
        for level in (1..=5).rev() {
            let out = if level == 1 { widths[0] } else { widths[level - 2] };
            let skip = (level >= 2).then(|| format!("enc{}", level - 1));
            let next_in = if skip.is_some() { 2 * out } else { out };
            stages.push(StageSpec::new(
                format!("dec{level}"),
                StageOp::Deconv { skip_from: skip },
                (prev, out),
                Norm::Instance,
                relu,
            ));
            prev = next_in;
        }
        stages.push(StageSpec::new(
            "head",
            StageOp::Conv { kernel: 1, stride: 1 },
            (prev, 1),
            Norm::None,
            Activation::Sigmoid,
        ));
        Self {
            kind: NetworkKind::AttentionUnet,
            stages,
            shared_stages: vec!["dec1".into(), "head".into()],
        }
    }

    /// Total spatial reduction factor; inputs must be divisible by it.
    pub fn size_factor(&self) -> usize {
        1 << self.stages.iter().filter(|s| s.is_downsampling()).count()
    }

    pub fn count_downsampling(&self) -> usize {
        self.stages.iter().filter(|s| s.is_downsampling()).count()
    }

    pub fn count_upsampling(&self) -> usize {
        self.stages.iter().filter(|s| s.is_upsampling()).count()
    }

    pub fn count_residual(&self) -> usize {
        self.stages.iter().filter(|s| s.op == StageOp::Residual).count()
    }

    pub fn output_activation(&self) -> Activation {
        self.stages.last().map_or(Activation::Identity, |s| s.activation)
    }
}

#[derive(Clone, Debug)]
enum Block {
    Conv(Conv2d),
    Residual(Conv2d, Conv2d),
    Deconv(ConvTranspose2d),
}

#[derive(Clone, Debug)]
struct Stage {
    spec: StageSpec,
    block: Block,
}

impl Stage {
    fn build(pb: &ParamBuilder, spec: &StageSpec, init: Init) -> Result<Self> {
        let pb = pb.pp(&spec.name);
        // Instance norm removes any per-channel bias, so only un-normalized stages carry one.
        let bias = spec.norm == Norm::None;
        let (i, o) = (spec.in_channels, spec.out_channels);
        let block = match &spec.op {
            StageOp::Conv { kernel, stride } => {
                let pad = if *stride == 2 { (kernel - 1) / 2 } else { kernel / 2 };
                Block::Conv(Conv2d::new(&pb, i, o, *kernel, *stride, pad, bias, init)?)
            }
            StageOp::Residual => Block::Residual(
                Conv2d::new(&pb.pp("a"), i, o, 3, 1, 1, false, init)?,
                Conv2d::new(&pb.pp("b"), o, o, 3, 1, 1, false, init)?,
            ),
            StageOp::Deconv { .. } => Block::Deconv(ConvTranspose2d::upsample2x(&pb, i, o, bias, init)?),
        };
        Ok(Self {
            spec: spec.clone(),
            block,
        })
    }

    fn norm(&self, x: Tensor) -> Result<Tensor> {
        match self.spec.norm {
            Norm::None => Ok(x),
            Norm::Instance => instance_norm(&x),
        }
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match &self.block {
            Block::Conv(c) => self.spec.activation.apply(&self.norm(c.forward(x)?)?),
            Block::Deconv(d) => self.spec.activation.apply(&self.norm(d.forward(x)?)?),
            Block::Residual(a, b) => {
                let h = self.norm(a.forward(x)?)?.relu()?;
                let h = self.norm(b.forward(&h)?)?;
                Ok((x + h)?)
            }
        }
    }
}

fn check_input(x: &Tensor, factor: usize, what: &str) -> Result<()> {
    let (_, c, h, w) = x.dims4()?;
    if c != 1 {
        return Err(Error::Shape(format!("{what}: expected 1 input channel, got {c}")));
    }
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::Shape(format!(
            "{what}: input {h}x{w} is not divisible by {factor}"
        )));
    }
    Ok(())
}

/// A plain feed-forward network (generator or discriminator).
#[derive(Clone, Debug)]
pub struct SequentialNet {
    spec: NetworkSpec,
    stages: Vec<Stage>,
}

impl SequentialNet {
    pub fn build(pb: &ParamBuilder, spec: &NetworkSpec, init: Init) -> Result<Self> {
        if spec.kind == NetworkKind::AttentionUnet {
            return Err(Error::InvalidInput("attention U-Nets are built as an AttentionPair".into()));
        }
        let stages = spec
            .stages
            .iter()
            .map(|s| Stage::build(pb, s, init))
            .collect::<Result<_>>()?;
        Ok(Self {
            spec: spec.clone(),
            stages,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        check_input(x, self.spec.size_factor(), "network")?;
        let mut h = x.clone();
        for s in &self.stages {
            h = s.forward(&h)?;
        }
        Ok(h)
    }
}

/// Encoder plus non-shared decoder stages of one attention branch.
#[derive(Clone, Debug)]
struct Branch {
    encoder: Vec<Stage>,
    decoder: Vec<Stage>,
}

/// Two tumor-attention U-Nets, one reading source-domain images and one
/// reading pseudo target-domain images. `tail` holds the shared last two
/// stages; both branches call the same instance.
#[derive(Clone, Debug)]
pub struct AttentionPair {
    spec: NetworkSpec,
    source: Branch,
    pseudo: Branch,
    tail: Vec<Stage>,
}

/// Output of one attention branch.
pub struct AttentionOutput {
    /// Penultimate-stage activations `(N, C, H, W)`.
    pub features: Tensor,
    /// Tumor probability map `(N, 1, H, W)`.
    pub probability: Tensor,
}

impl AttentionPair {
    pub fn build(pb: &ParamBuilder, spec: &NetworkSpec, init: Init) -> Result<Self> {
        if spec.kind != NetworkKind::AttentionUnet {
            return Err(Error::InvalidInput("expected an attention_unet spec".into()));
        }
        let branch = |prefix: &str| -> Result<Branch> {
            let pb = pb.pp(prefix);
            let mut encoder = Vec::new();
            let mut decoder = Vec::new();
            for s in spec.stages.iter().filter(|s| !spec.shared_stages.contains(&s.name)) {
                let stage = Stage::build(&pb, s, init)?;
                if s.is_upsampling() {
                    decoder.push(stage);
                } else {
                    encoder.push(stage);
                }
            }
            Ok(Branch { encoder, decoder })
        };
        let source = branch("source")?;
        let pseudo = branch("pseudo")?;
        let shared_pb = pb.pp("shared");
        let tail = spec
            .stages
            .iter()
            .filter(|s| spec.shared_stages.contains(&s.name))
            .map(|s| Stage::build(&shared_pb, s, init))
            .collect::<Result<_>>()?;
        Ok(Self {
            spec: spec.clone(),
            source,
            pseudo,
            tail,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    fn run(&self, branch: &Branch, x: &Tensor) -> Result<AttentionOutput> {
        check_input(x, self.spec.size_factor(), "attention net")?;
        let mut skips: Vec<(String, Tensor)> = Vec::new();
        let mut h = x.clone();
        for s in &branch.encoder {
            h = s.forward(&h)?;
            skips.push((s.spec.name.clone(), h.clone()));
        }
        let decoders = branch.decoder.iter().chain(self.tail.iter().filter(|s| s.spec.is_upsampling()));
        for s in decoders {
            h = s.forward(&h)?;
            if let StageOp::Deconv { skip_from: Some(name) } = &s.spec.op {
                let skip = &skips
                    .iter()
                    .find(|(n, _)| n == name)
                    .ok_or_else(|| Error::InvalidInput(format!("unknown skip source {name}")))?
                    .1;
                h = Tensor::cat(&[&h, skip], 1)?;
            }
        }
        let features = h;
        let mut out = features.clone();
        for s in self.tail.iter().filter(|s| !s.spec.is_upsampling()) {
            out = s.forward(&out)?;
        }
        Ok(AttentionOutput {
            features,
            probability: out,
        })
    }

    /// Branch reading real source-domain images.
    pub fn forward_source(&self, x: &Tensor) -> Result<AttentionOutput> {
        self.run(&self.source, x)
    }

    /// Branch reading pseudo target-domain images.
    pub fn forward_pseudo(&self, x: &Tensor) -> Result<AttentionOutput> {
        self.run(&self.pseudo, x)
    }
}
