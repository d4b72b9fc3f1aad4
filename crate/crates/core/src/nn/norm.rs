//! Batch and instance normalization as custom ops with closed-form backward.

use candle_core::backend::BackendStorage;
use candle_core::{CpuStorage, CustomOp3, Layout, Shape, Tensor};

use crate::error::Result;

/// Statistics are taken per channel over batch and space (`per_sample`
/// false) or per sample and channel over space (true).
struct Normalize {
    per_sample: bool,
    eps: f64,
}

struct Dims {
    n: usize,
    c: usize,
    hw: usize,
}

impl Normalize {
    fn groups(&self, d: &Dims) -> usize {
        if self.per_sample {
            d.n * d.c
        } else {
            d.c
        }
    }

    // Calls `f(group, channel, range)` for every contiguous run of one group.
    fn runs(&self, d: &Dims, mut f: impl FnMut(usize, usize, std::ops::Range<usize>)) {
        for b in 0..d.n {
            for ch in 0..d.c {
                let start = (b * d.c + ch) * d.hw;
                let g = if self.per_sample { b * d.c + ch } else { ch };
                f(g, ch, start..start + d.hw);
            }
        }
    }

    /// Mean and biased variance per group.
    fn stats(&self, x: &[f64], d: &Dims) -> (Vec<f64>, Vec<f64>) {
        let g = self.groups(d);
        let m = (x.len() / g) as f64;
        let mut mean = vec![0.0; g];
        self.runs(d, |gi, _, r| mean[gi] += x[r].iter().sum::<f64>());
        mean.iter_mut().for_each(|v| *v /= m);
        let mut var = vec![0.0; g];
        self.runs(d, |gi, _, r| var[gi] += x[r].iter().map(|v| (v - mean[gi]).powi(2)).sum::<f64>());
        var.iter_mut().for_each(|v| *v /= m);
        (mean, var)
    }

    fn forward(&self, x: &[f64], gamma: &[f64], beta: &[f64], d: &Dims) -> Vec<f64> {
        let (mean, var) = self.stats(x, d);
        let mut y = vec![0.0; x.len()];
        self.runs(d, |g, ch, r| {
            let inv = 1.0 / (var[g] + self.eps).sqrt();
            for i in r {
                y[i] = gamma[ch] * (x[i] - mean[g]) * inv + beta[ch];
            }
        });
        y
    }

    /// Gradients for `x`, `gamma` and `beta`.
    fn backward(&self, x: &[f64], gamma: &[f64], dy: &[f64], d: &Dims) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (mean, var) = self.stats(x, d);
        let g = self.groups(d);
        let m = (x.len() / g) as f64;
        let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        // per-group sums of dy and dy * xhat
        let (mut sdy, mut sdx) = (vec![0.0; g], vec![0.0; g]);
        let (mut dgamma, mut dbeta) = (vec![0.0; d.c], vec![0.0; d.c]);
        self.runs(d, |gi, ch, r| {
            for i in r {
                let xhat = (x[i] - mean[gi]) * inv[gi];
                sdy[gi] += dy[i];
                sdx[gi] += dy[i] * xhat;
                dgamma[ch] += dy[i] * xhat;
                dbeta[ch] += dy[i];
            }
        });
        let mut dx = vec![0.0; x.len()];
        self.runs(d, |gi, ch, r| {
            let k = gamma[ch] * inv[gi];
            for i in r {
                let xhat = (x[i] - mean[gi]) * inv[gi];
                dx[i] = k * (dy[i] - sdy[gi] / m - xhat * sdx[gi] / m);
            }
        });
        (dx, dgamma, dbeta)
    }
}

fn dims(shape: &[usize]) -> candle_core::Result<Dims> {
    match shape {
        &[n, c, h, w] => Ok(Dims { n, c, hw: h * w }),
        _ => candle_core::bail!("normalization expects (N, C, H, W), got {shape:?}"),
    }
}

fn read(s: &CpuStorage, l: &Layout) -> candle_core::Result<Vec<f64>> {
    let (a, b) = l
        .contiguous_offsets()
        .ok_or_else(|| candle_core::Error::Msg("normalization: operand is not contiguous".into()))?;
    Ok(match s {
        CpuStorage::F32(v) => v[a..b].iter().map(|&x| x as f64).collect(),
        CpuStorage::F64(v) => v[a..b].to_vec(),
        _ => candle_core::bail!("normalization: unsupported dtype {:?}", s.dtype()),
    })
}

fn values(t: &Tensor) -> candle_core::Result<Vec<f64>> {
    t.flatten_all()?.to_dtype(candle_core::DType::F64)?.to_vec1::<f64>()
}

fn store(v: Vec<f64>, like: &CpuStorage) -> CpuStorage {
    match like {
        CpuStorage::F32(_) => CpuStorage::F32(v.into_iter().map(|x| x as f32).collect()),
        _ => CpuStorage::F64(v),
    }
}

fn tensor(v: Vec<f64>, like: &Tensor) -> candle_core::Result<Tensor> {
    Tensor::from_vec(v, like.shape(), like.device())?.to_dtype(like.dtype())
}

impl CustomOp3 for Normalize {
    fn name(&self) -> &'static str {
        "normalize"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
        s3: &CpuStorage,
        l3: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let d = dims(l1.dims())?;
        let y = self.forward(&read(s1, l1)?, &read(s2, l2)?, &read(s3, l3)?, &d);
        Ok((store(y, s1), l1.shape().clone()))
    }

    fn bwd(
        &self,
        x: &Tensor,
        gamma: &Tensor,
        beta: &Tensor,
        _y: &Tensor,
        dy: &Tensor,
    ) -> candle_core::Result<(Option<Tensor>, Option<Tensor>, Option<Tensor>)> {
        let d = dims(x.dims())?;
        let (dx, dg, db) = self.backward(&values(x)?, &values(gamma)?, &values(dy)?, &d);
        Ok((Some(tensor(dx, x)?), Some(tensor(dg, gamma)?), Some(tensor(db, beta)?)))
    }
}

/// Training-mode batch normalization of `x (N, C, H, W)` with per-channel
/// affine `gamma`, `beta` of shape `(C)`.
pub fn batch_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let op = Normalize { per_sample: false, eps };
    Ok(x.contiguous()?.apply_op3(&gamma.contiguous()?, &beta.contiguous()?, op)?)
}

/// Per-channel batch mean and biased variance of `x (N, C, H, W)`.
pub fn batch_stats(x: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
    let op = Normalize { per_sample: false, eps: 0.0 };
    Ok(op.stats(&values(x)?, &dims(x.dims())?))
}

/// Per-sample, per-channel normalization over the spatial axes (no affine).
pub fn instance_norm(x: &Tensor) -> Result<Tensor> {
    let c = x.dims4()?.1;
    let ones = Tensor::ones(c, x.dtype(), x.device())?;
    let zeros = ones.zeros_like()?;
    let op = Normalize { per_sample: true, eps: 1e-5 };
    Ok(x.contiguous()?.apply_op3(&ones, &zeros, op)?)
}
