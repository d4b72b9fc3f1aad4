//! Minimal neural-network plumbing on top of `candle-core`: seeded parameter
//! construction, the layers the networks need, Adam, and checkpoints.

mod adam;
mod checkpoint;
mod conv;
mod norm;
mod layers;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Checkpoint, CheckpointGroup};
pub use conv::{conv2d, conv_transpose2d_x2};
pub use norm::{batch_norm, instance_norm};
pub use layers::{leaky_relu, sigmoid, BatchNorm2d, Conv2d, ConvTranspose2d, Init};

use std::cell::RefCell;
use std::rc::Rc;

use candle_core::{DType, Device, Shape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct NamedParam {
    pub name: String,
    pub var: Var,
    /// Running statistics are stored alongside weights but never optimized.
    pub trainable: bool,
}

/// Seeded, prefix-scoped parameter factory. Cloning shares the underlying
/// store and random stream.
#[derive(Clone)]
pub struct ParamBuilder {
    store: Rc<RefCell<Vec<NamedParam>>>,
    rng: Rc<RefCell<ChaCha8Rng>>,
    prefix: String,
    dtype: DType,
}

impl ParamBuilder {
    pub fn new(seed: u64, dtype: DType) -> Self {
        Self {
            store: Rc::default(),
            rng: Rc::new(RefCell::new(ChaCha8Rng::seed_from_u64(seed))),
            prefix: String::new(),
            dtype,
        }
    }

    pub fn pp(&self, name: impl AsRef<str>) -> Self {
        let prefix = if self.prefix.is_empty() {
            name.as_ref().to_string()
        } else {
            format!("{}.{}", self.prefix, name.as_ref())
        };
        Self {
            prefix,
            ..self.clone()
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    fn register(&self, name: &str, tensor: Tensor, trainable: bool) -> Result<Var> {
        let full = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        let mut store = self.store.borrow_mut();
        if store.iter().any(|p| p.name == full) {
            return Err(Error::InvalidInput(format!("parameter `{full}` registered twice")));
        }
        let var = Var::from_tensor(&tensor.to_dtype(self.dtype)?)?;
        store.push(NamedParam {
            name: full,
            var: var.clone(),
            trainable,
        });
        Ok(var)
    }

    pub fn normal(&self, name: &str, shape: impl Into<Shape>, std: f64) -> Result<Var> {
        let shape = shape.into();
        let dist = Normal::new(0.0, std).map_err(|e| Error::InvalidInput(e.to_string()))?;
        let data: Vec<f64> = {
            let mut rng = self.rng.borrow_mut();
            (0..shape.elem_count()).map(|_| dist.sample(&mut *rng)).collect()
        };
        self.register(name, Tensor::from_vec(data, shape, &Device::Cpu)?, true)
    }

    pub fn constant(&self, name: &str, shape: impl Into<Shape>, value: f64, trainable: bool) -> Result<Var> {
        let t = (Tensor::ones(shape, DType::F64, &Device::Cpu)? * value)?;
        self.register(name, t, trainable)
    }

    /// Everything registered through this builder and its clones.
    pub fn finish(&self) -> ParamStore {
        ParamStore {
            params: self.store.borrow().clone(),
        }
    }
}

/// An ordered, named parameter group.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<NamedParam>,
}

impl ParamStore {
    pub fn params(&self) -> &[NamedParam] {
        &self.params
    }

    pub fn trainable(&self) -> Vec<Var> {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.var.clone())
            .collect()
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.var)
    }

    pub fn num_trainable(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.var.elem_count())
            .sum()
    }

    /// Deep copies of every parameter's current value.
    pub fn snapshot(&self) -> Result<Vec<Tensor>> {
        self.params
            .iter()
            .map(|p| Ok(p.var.as_tensor().copy()?))
            .collect()
    }

    pub fn restore(&self, snapshot: &[Tensor]) -> Result<()> {
        if snapshot.len() != self.params.len() {
            return Err(Error::InvalidInput("snapshot does not match parameter store".into()));
        }
        for (p, t) in self.params.iter().zip(snapshot) {
            p.var.set(t)?;
        }
        Ok(())
    }

    /// Flattened bit patterns of every value; used for exact equality checks.
    pub fn fingerprint(&self, trainable_only: bool) -> Result<Vec<u64>> {
        let mut out = Vec::new();
        for p in self.params.iter().filter(|p| p.trainable || !trainable_only) {
            let t = p.var.as_tensor().flatten_all()?;
            match t.dtype() {
                DType::F64 => out.extend(t.to_vec1::<f64>()?.into_iter().map(f64::to_bits)),
                _ => out.extend(
                    t.to_dtype(DType::F32)?
                        .to_vec1::<f32>()?
                        .into_iter()
                        .map(|v| v.to_bits() as u64),
                ),
            }
        }
        Ok(out)
    }
}

/// Numeric precision for network parameters and activations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> DType {
        match self {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

/// Stacks equally shaped 2D arrays into an `(N, 1, H, W)` tensor.
pub fn stack_images<'a, T>(images: impl IntoIterator<Item = &'a ndarray::Array2<T>>, dtype: DType) -> Result<Tensor>
where
    T: Copy + Into<f64> + 'a,
{
    let mut data = Vec::new();
    let mut shape = None;
    let mut n = 0;
    for img in images {
        match shape {
            None => shape = Some(img.dim()),
            Some(s) if s != img.dim() => {
                return Err(Error::Shape(format!("cannot stack {:?} with {s:?}", img.dim())));
            }
            _ => {}
        }
        data.extend(img.iter().map(|&v| v.into()));
        n += 1;
    }
    let (h, w) = shape.ok_or_else(|| Error::InvalidInput("no images to stack".into()))?;
    Ok(Tensor::from_vec(data, (n, 1, h, w), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Splits an `(N, 1, H, W)` tensor back into 2D `f32` arrays.
pub fn unstack_images(t: &Tensor) -> Result<Vec<ndarray::Array2<f32>>> {
    let (n, c, h, w) = t.dims4()?;
    if c != 1 {
        return Err(Error::Shape(format!("expected one channel, got {c}")));
    }
    let flat = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    Ok(flat
        .chunks(h * w)
        .take(n)
        .map(|chunk| ndarray::Array2::from_shape_vec((h, w), chunk.to_vec()).expect("chunk size"))
        .collect())
}

pub(crate) fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}
