//! Single-file checkpoints (safetensors container) holding any number of
//! parameter groups, their Adam moments, and string metadata.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use candle_core::{Device, Tensor};
use safetensors::SafeTensors;

use super::{Adam, ParamStore};
use crate::error::{Error, IoContext, Result};

const META_KEY: &str = "xmodseg";

pub struct CheckpointGroup<'a> {
    pub name: &'a str,
    pub params: &'a ParamStore,
    pub optimizer: Option<&'a Adam>,
}

#[derive(Debug)]
pub struct Checkpoint {
    pub metadata: BTreeMap<String, String>,
    tensors: HashMap<String, Tensor>,
}

impl Checkpoint {
    /// Serializes deterministically: identical contents give identical bytes.
    pub fn to_bytes(groups: &[CheckpointGroup<'_>], metadata: &BTreeMap<String, String>) -> Result<Vec<u8>> {
        let mut tensors: BTreeMap<String, Tensor> = BTreeMap::new();
        let mut meta = metadata.clone();
        for g in groups {
            for p in g.params.params() {
                tensors.insert(format!("{}/{}", g.name, p.name), p.var.as_tensor().clone());
            }
            if let Some(opt) = g.optimizer {
                meta.insert(format!("{}.adam_step", g.name), opt.step.to_string());
                meta.insert(format!("{}.adam_config", g.name), serde_json::to_string(&opt.config)?);
                for (i, (m, v)) in opt.m.iter().zip(&opt.v).enumerate() {
                    tensors.insert(format!("{}/adam.m/{i:04}", g.name), m.clone());
                    tensors.insert(format!("{}/adam.v/{i:04}", g.name), v.clone());
                }
            }
        }
        let info = HashMap::from([(META_KEY.to_string(), serde_json::to_string(&meta)?)]);
        safetensors::serialize(tensors, Some(info)).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn save(path: &Path, groups: &[CheckpointGroup<'_>], metadata: &BTreeMap<String, String>) -> Result<()> {
        let bytes = Self::to_bytes(groups, metadata)?;
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).at(parent)?;
        }
        fs::write(path, bytes).at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).at(path)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (_, header) = SafeTensors::read_metadata(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let metadata = match header.metadata().as_ref().and_then(|m| m.get(META_KEY)) {
            Some(json) => serde_json::from_str(json)?,
            None => BTreeMap::new(),
        };
        let tensors = candle_core::safetensors::load_buffer(bytes, &Device::Cpu)?;
        Ok(Self { metadata, tensors })
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(String::as_str)
    }

    pub fn has_group(&self, group: &str) -> bool {
        let prefix = format!("{group}/");
        self.tensors.keys().any(|k| k.starts_with(&prefix))
    }

    /// Copies stored values into an identically structured parameter group.
    pub fn restore_params(&self, group: &str, params: &ParamStore) -> Result<()> {
        for p in params.params() {
            let key = format!("{group}/{}", p.name);
            let t = self
                .tensors
                .get(&key)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{key}`")))?;
            if t.dims() != p.var.dims() {
                return Err(Error::Checkpoint(format!(
                    "`{key}`: stored shape {:?}, expected {:?}",
                    t.dims(),
                    p.var.dims()
                )));
            }
            p.var.set(&t.to_dtype(p.var.dtype())?)?;
        }
        Ok(())
    }

    pub fn restore_optimizer(&self, group: &str, opt: &mut Adam) -> Result<()> {
        let step: u64 = self
            .meta(&format!("{group}.adam_step"))
            .ok_or_else(|| Error::Checkpoint(format!("no optimizer state for `{group}`")))?
            .parse()
            .map_err(|e| Error::Checkpoint(format!("bad adam_step: {e}")))?;
        let fetch = |kind: &str, i: usize, like: &Tensor| -> Result<Tensor> {
            let key = format!("{group}/adam.{kind}/{i:04}");
            let t = self
                .tensors
                .get(&key)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{key}`")))?;
            Ok(t.to_dtype(like.dtype())?)
        };
        let n = opt.vars().len();
        let mut m = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for (i, var) in opt.vars().iter().enumerate() {
            m.push(fetch("m", i, var.as_tensor())?);
            v.push(fetch("v", i, var.as_tensor())?);
        }
        opt.load_moments(m, v, step)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{AdamConfig, ParamBuilder};
    use candle_core::DType;

    #[test]
    fn roundtrip_restores_values_moments_and_metadata() {
        let pb = ParamBuilder::new(3, DType::F32);
        pb.pp("a").normal("w", (2, 3), 1.0).unwrap();
        pb.pp("b").constant("r", 4, 0.5, false).unwrap();
        let store = pb.finish();
        let mut opt = Adam::new(store.trainable(), AdamConfig::default()).unwrap();
        let w = store.get("a.w").unwrap();
        let loss = w.as_tensor().sqr().unwrap().sum_all().unwrap();
        opt.step(&loss.backward().unwrap()).unwrap();

        let meta = BTreeMap::from([("iteration".to_string(), "7".to_string())]);
        let group = CheckpointGroup {
            name: "g",
            params: &store,
            optimizer: Some(&opt),
        };
        let bytes = Checkpoint::to_bytes(&[group], &meta).unwrap();
        let again = Checkpoint::to_bytes(
            &[CheckpointGroup {
                name: "g",
                params: &store,
                optimizer: Some(&opt),
            }],
            &meta,
        )
        .unwrap();
        assert_eq!(bytes, again);

        let fresh_pb = ParamBuilder::new(99, DType::F32);
        fresh_pb.pp("a").normal("w", (2, 3), 1.0).unwrap();
        fresh_pb.pp("b").constant("r", 4, 0.0, false).unwrap();
        let fresh = fresh_pb.finish();
        let mut fresh_opt = Adam::new(fresh.trainable(), AdamConfig::default()).unwrap();
        let ck = Checkpoint::from_bytes(&bytes).unwrap();
        ck.restore_params("g", &fresh).unwrap();
        ck.restore_optimizer("g", &mut fresh_opt).unwrap();
        assert_eq!(fresh.fingerprint(false).unwrap(), store.fingerprint(false).unwrap());
        assert_eq!(fresh_opt.steps(), 1);
        assert_eq!(ck.meta("iteration"), Some("7"));
        assert!(ck.restore_params("missing", &fresh).is_err());
    }
}
