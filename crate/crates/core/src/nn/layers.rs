use candle_core::{Tensor, Var};

use super::conv::{conv2d, conv_transpose2d_x2};
use super::norm::{batch_norm, batch_stats};
use super::ParamBuilder;
use crate::error::Result;

/// Weight initialization scheme.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// `N(0, std)`; the usual choice for adversarial networks.
    Normal(f64),
    /// He-normal scaled by fan-in.
    Kaiming,
}

impl Init {
    fn std(self, fan_in: usize) -> f64 {
        match self {
            Init::Normal(std) => std,
            Init::Kaiming => (2.0 / fan_in as f64).sqrt(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    weight: Var,
    bias: Option<Var>,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        pb: &ParamBuilder,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        init: Init,
    ) -> Result<Self> {
        let weight = pb.normal("weight", (out_ch, in_ch, kernel, kernel), init.std(in_ch * kernel * kernel))?;
        let bias = if bias {
            Some(pb.constant("bias", out_ch, 0.0, true)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = conv2d(x, self.weight.as_tensor(), self.stride, self.padding)?;
        match &self.bias {
            Some(b) => Ok(y.broadcast_add(&b.as_tensor().reshape((1, (), 1, 1))?)?),
            None => Ok(y),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }
}

/// Transposed convolution; with `kernel 3, stride 2, padding 1, output_padding 1`
/// it exactly doubles the spatial size.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    weight: Var,
    bias: Option<Var>,
}

impl ConvTranspose2d {
    pub fn upsample2x(pb: &ParamBuilder, in_ch: usize, out_ch: usize, bias: bool, init: Init) -> Result<Self> {
        let weight = pb.normal("weight", (in_ch, out_ch, 3, 3), init.std(in_ch * 9))?;
        let bias = if bias {
            Some(pb.constant("bias", out_ch, 0.0, true)?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = conv_transpose2d_x2(x, self.weight.as_tensor())?;
        match &self.bias {
            Some(b) => Ok(y.broadcast_add(&b.as_tensor().reshape((1, (), 1, 1))?)?),
            None => Ok(y),
        }
    }
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&(x * slope)?)?)
}

/// Logistic function written through `tanh`, which keeps both the value and
/// its gradient finite for any input.
pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((((x * 0.5)?.tanh()? + 1.0)? * 0.5)?)
}

/// Batch normalization with learnable affine and running statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    gamma: Var,
    beta: Var,
    running_mean: Var,
    running_var: Var,
    momentum: f64,
}

impl BatchNorm2d {
    pub fn new(pb: &ParamBuilder, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: pb.constant("gamma", channels, 1.0, true)?,
            beta: pb.constant("beta", channels, 0.0, true)?,
            running_mean: pb.constant("running_mean", channels, 0.0, false)?,
            running_var: pb.constant("running_var", channels, 1.0, false)?,
            momentum: 0.1,
        })
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        if train {
            let (mean, var) = batch_stats(x)?;
            let m = self.momentum;
            let update = |running: &Var, batch: Vec<f64>| -> Result<()> {
                let batch = Tensor::from_vec(batch, running.dims(), running.device())?.to_dtype(running.dtype())?;
                running.set(&((running.as_tensor() * (1.0 - m))? + (batch * m)?)?)?;
                Ok(())
            };
            update(&self.running_mean, mean)?;
            update(&self.running_var, var)?;
            return batch_norm(x, self.gamma.as_tensor(), self.beta.as_tensor(), 1e-5);
        }
        let shape = (1, (), 1, 1);
        let scale = (self.running_var.as_tensor() + 1e-5)?.sqrt()?.recip()?.mul(self.gamma.as_tensor())?;
        let shift = (self.beta.as_tensor() - self.running_mean.as_tensor().mul(&scale)?)?;
        Ok(x.broadcast_mul(&scale.reshape(shape)?)?.broadcast_add(&shift.reshape(shape)?)?)
    }
}
