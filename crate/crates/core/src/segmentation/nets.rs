use candle_core::Tensor;

use crate::error::Result;
use crate::nn::{sigmoid, BatchNorm2d, Conv2d, ConvTranspose2d, Init, ParamBuilder};

fn scaled(base: usize, width: f64) -> usize {
    ((base as f64 * width).round() as usize).max(4)
}

/// Convolution followed by batch normalization.
#[derive(Clone, Debug)]
struct ConvBn {
    conv: Conv2d,
    bn: BatchNorm2d,
}

impl ConvBn {
    fn new(pb: &ParamBuilder, in_ch: usize, out_ch: usize, k: usize, stride: usize) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(&pb.pp("conv"), in_ch, out_ch, k, stride, k / 2, false, Init::Kaiming)?,
            bn: BatchNorm2d::new(&pb.pp("bn"), out_ch)?,
        })
    }

    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        self.bn.forward(&self.conv.forward(x)?, train)
    }

    fn forward_relu(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        Ok(self.forward(x, train)?.relu()?)
    }
}

// ---------------------------------------------------------------- U-Net

#[derive(Clone, Debug)]
struct DoubleConv(ConvBn, ConvBn);

impl DoubleConv {
    fn new(pb: &ParamBuilder, in_ch: usize, out_ch: usize) -> Result<Self> {
        Ok(Self(
            ConvBn::new(&pb.pp("c1"), in_ch, out_ch, 3, 1)?,
            ConvBn::new(&pb.pp("c2"), out_ch, out_ch, 3, 1)?,
        ))
    }

    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        self.1.forward_relu(&self.0.forward_relu(x, train)?, train)
    }
}

/// U-Net with batch normalization after every convolution.
#[derive(Clone, Debug)]
pub(crate) struct UnetBn {
    down: Vec<DoubleConv>,
    up: Vec<(ConvTranspose2d, DoubleConv)>,
    head: Conv2d,
}

pub(crate) const UNET_WIDTHS: [usize; 5] = [64, 128, 256, 512, 1024];

impl UnetBn {
    pub fn new(pb: &ParamBuilder, width: f64) -> Result<Self> {
        let w: Vec<usize> = UNET_WIDTHS.iter().map(|&c| scaled(c, width)).collect();
        let mut down = Vec::new();
        let mut in_ch = 1;
        for (i, &c) in w.iter().enumerate() {
            down.push(DoubleConv::new(&pb.pp(format!("down{i}")), in_ch, c)?);
            in_ch = c;
        }
        let mut up = Vec::new();
        for i in (0..w.len() - 1).rev() {
            let pb = pb.pp(format!("up{i}"));
            let t = ConvTranspose2d::upsample2x(&pb.pp("deconv"), w[i + 1], w[i], false, Init::Kaiming)?;
            up.push((t, DoubleConv::new(&pb, 2 * w[i], w[i])?));
        }
        let head = Conv2d::new(&pb.pp("head"), w[0], 1, 1, 1, 0, true, Init::Kaiming)?;
        Ok(Self { down, up, head })
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mut skips = Vec::new();
        let mut h = x.clone();
        for (i, block) in self.down.iter().enumerate() {
            if i > 0 {
                h = h.max_pool2d(2)?;
            }
            h = block.forward(&h, train)?;
            skips.push(h.clone());
        }
        skips.pop();
        for (deconv, block) in &self.up {
            let skip = skips.pop().expect("one skip per decoder level");
            // the deconvolution is followed by the block's own BN convs
            h = Tensor::cat(&[&deconv.forward(&h)?, &skip], 1)?;
            h = block.forward(&h, train)?;
        }
        sigmoid(&self.head.forward(&h)?)
    }
}

// ---------------------------------------------------------- Residual FCN

#[derive(Clone, Debug)]
struct Bottleneck {
    reduce: ConvBn,
    conv: ConvBn,
    expand: ConvBn,
    shortcut: Option<ConvBn>,
}

impl Bottleneck {
    fn new(pb: &ParamBuilder, in_ch: usize, mid: usize, stride: usize) -> Result<Self> {
        let out = 4 * mid;
        Ok(Self {
            reduce: ConvBn::new(&pb.pp("reduce"), in_ch, mid, 1, 1)?,
            conv: ConvBn::new(&pb.pp("conv"), mid, mid, 3, stride)?,
            expand: ConvBn::new(&pb.pp("expand"), mid, out, 1, 1)?,
            shortcut: if stride != 1 || in_ch != out {
                Some(ConvBn::new(&pb.pp("shortcut"), in_ch, out, 1, stride)?)
            } else {
                None
            },
        })
    }

    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let h = self.reduce.forward_relu(x, train)?;
        let h = self.conv.forward_relu(&h, train)?;
        let h = self.expand.forward(&h, train)?;
        let s = match &self.shortcut {
            Some(sc) => sc.forward(x, train)?,
            None => x.clone(),
        };
        Ok((h + s)?.relu()?)
    }
}

/// Bottleneck blocks per stage of the 50-layer residual encoder that feed
/// the fusion taps.
pub(crate) const RESNET_STAGES: [usize; 3] = [3, 4, 6];

/// Residual encoder with multi-resolution fusion by element-wise summation.
#[derive(Clone, Debug)]
pub(crate) struct ResidualFcn {
    stem: ConvBn,
    stages: Vec<Vec<Bottleneck>>,
    project: Vec<Conv2d>,
    refine: ConvBn,
    head: Conv2d,
}

impl ResidualFcn {
    pub fn new(pb: &ParamBuilder, width: f64) -> Result<Self> {
        let stem_ch = scaled(64, width);
        let stem = ConvBn::new(&pb.pp("stem"), 1, stem_ch, 7, 2)?;
        let fused = scaled(64, width);
        let mut stages = Vec::new();
        let mut project = Vec::new();
        let mut in_ch = stem_ch;
        for (s, &n) in RESNET_STAGES.iter().enumerate() {
            let mid = scaled(64 << s, width);
            let blocks = (0..n)
                .map(|b| {
                    let stride = if s > 0 && b == 0 { 2 } else { 1 };
                    let blk = Bottleneck::new(&pb.pp(format!("stage{s}.{b}")), in_ch, mid, stride);
                    in_ch = 4 * mid;
                    blk
                })
                .collect::<Result<Vec<_>>>()?;
            stages.push(blocks);
            project.push(Conv2d::new(&pb.pp(format!("project{s}")), in_ch, fused, 1, 1, 0, true, Init::Kaiming)?);
        }
        Ok(Self {
            stem,
            stages,
            project,
            refine: ConvBn::new(&pb.pp("refine"), fused, fused, 3, 1)?,
            head: Conv2d::new(&pb.pp("head"), fused, 1, 1, 1, 0, true, Init::Kaiming)?,
        })
    }

    /// The projected feature maps at 1/4, 1/8 and 1/16 resolution, each
    /// brought to 1/4 resolution; they are summed to form the fused map.
    pub fn fusion_inputs(&self, x: &Tensor, train: bool) -> Result<Vec<Tensor>> {
        let mut h = self.stem.forward_relu(x, train)?.max_pool2d(2)?;
        let mut taps = Vec::new();
        for (s, (blocks, proj)) in self.stages.iter().zip(&self.project).enumerate() {
            for b in blocks {
                h = b.forward(&h, train)?;
            }
            let p = proj.forward(&h)?;
            let (_, _, ph, pw) = p.dims4()?;
            taps.push(if s == 0 { p } else { p.upsample_nearest2d(ph << s, pw << s)? });
        }
        Ok(taps)
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let taps = self.fusion_inputs(x, train)?;
        let mut fused = taps[0].clone();
        for t in &taps[1..] {
            fused = (fused + t)?;
        }
        let (_, _, h, w) = x.dims4()?;
        let up = fused.relu()?.upsample_nearest2d(h, w)?;
        sigmoid(&self.head.forward(&self.refine.forward_relu(&up, train)?)?)
    }
}

// ------------------------------------------------------------- Dense FCN

/// Dense block: each layer sees the concatenation of the block input and
/// every earlier layer's output.
#[derive(Clone, Debug)]
struct DenseBlock {
    layers: Vec<(BatchNorm2d, Conv2d)>,
}

impl DenseBlock {
    fn new(pb: &ParamBuilder, in_ch: usize, growth: usize, n: usize) -> Result<Self> {
        let layers = (0..n)
            .map(|i| {
                let pb = pb.pp(format!("layer{i}"));
                let c = in_ch + i * growth;
                Ok((
                    BatchNorm2d::new(&pb.pp("bn"), c)?,
                    Conv2d::new(&pb.pp("conv"), c, growth, 3, 1, 1, false, Init::Kaiming)?,
                ))
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    /// Returns (input ++ new features, new features only).
    fn forward(&self, x: &Tensor, train: bool) -> Result<(Tensor, Tensor)> {
        let mut all = x.clone();
        let mut new = Vec::new();
        for (bn, conv) in &self.layers {
            let f = conv.forward(&bn.forward(&all, train)?.relu()?)?;
            all = Tensor::cat(&[&all, &f], 1)?;
            new.push(f);
        }
        Ok((all, Tensor::cat(&new, 1)?))
    }
}

/// Growth rate at full width; scaled like every other channel count.
pub(crate) const DENSE_GROWTH: usize = 48;
pub(crate) const DENSE_LAYERS: usize = 4;
pub(crate) const DENSE_LEVELS: usize = 5;

/// Reduced fully convolutional DenseNet ("Tiramisu").
#[derive(Clone, Debug)]
pub(crate) struct DenseFcn {
    stem: Conv2d,
    down: Vec<(DenseBlock, BatchNorm2d, Conv2d)>,
    bottleneck: DenseBlock,
    up: Vec<(ConvTranspose2d, DenseBlock)>,
    head: Conv2d,
}

impl DenseFcn {
    pub fn new(pb: &ParamBuilder, width: f64) -> Result<Self> {
        let (g, n) = (scaled(DENSE_GROWTH, width), DENSE_LAYERS);
        let stem_ch = scaled(48, width);
        let stem = Conv2d::new(&pb.pp("stem"), 1, stem_ch, 3, 1, 1, false, Init::Kaiming)?;
        let mut c = stem_ch;
        let mut skip_ch = Vec::new();
        let mut down = Vec::new();
        for l in 0..DENSE_LEVELS - 1 {
            let pb = pb.pp(format!("down{l}"));
            let block = DenseBlock::new(&pb.pp("block"), c, g, n)?;
            c += g * n;
            skip_ch.push(c);
            down.push((
                block,
                BatchNorm2d::new(&pb.pp("td.bn"), c)?,
                Conv2d::new(&pb.pp("td.conv"), c, c, 1, 1, 0, false, Init::Kaiming)?,
            ));
        }
        let bottleneck = DenseBlock::new(&pb.pp("bottleneck"), c, g, n)?;
        let mut up = Vec::new();
        for l in (0..DENSE_LEVELS - 1).rev() {
            let pb = pb.pp(format!("up{l}"));
            let tu = ConvTranspose2d::upsample2x(&pb.pp("tu"), g * n, g * n, false, Init::Kaiming)?;
            up.push((tu, DenseBlock::new(&pb.pp("block"), g * n + skip_ch[l], g, n)?));
        }
        let head_in = g * n + skip_ch[0] + g * n;
        Ok(Self {
            stem,
            down,
            bottleneck,
            up,
            head: Conv2d::new(&pb.pp("head"), head_in, 1, 1, 1, 0, true, Init::Kaiming)?,
        })
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mut h = self.stem.forward(x)?;
        let mut skips = Vec::new();
        for (block, bn, conv) in &self.down {
            let (all, _) = block.forward(&h, train)?;
            skips.push(all.clone());
            h = conv.forward(&bn.forward(&all, train)?.relu()?)?.max_pool2d(2)?;
        }
        let (_, mut new) = self.bottleneck.forward(&h, train)?;
        let mut last_all = h;
        for (tu, block) in &self.up {
            let skip = skips.pop().expect("one skip per level");
            let merged = Tensor::cat(&[&tu.forward(&new)?, &skip], 1)?;
            let (all, n) = block.forward(&merged, train)?;
            last_all = all;
            new = n;
        }
        sigmoid(&self.head.forward(&last_all)?)
    }
}
