//! Binary checkpoint format.
//!
//! ```text
//! "JL1V"  u32 version  u32 meta_len  meta (UTF-8 JSON)
//! repeated: u32 name_len  name  u32 rank  rank × u32 extent  f32 payload
//! ```
//!
//! All integers and floats are little-endian. Model tensors come first
//! (`param_count` of them), followed by the optimizer moments when present.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, AdamState, ModelParams, Tensor};
use crate::error::{Error, Result};
use crate::train::TrainConfig;
use crate::vae::{Architecture, ConvVae, LossConfig};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"JL1V";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerMeta {
    pub config: AdamConfig,
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub architecture: Architecture,
    pub latent_dim: usize,
    pub image_size: usize,
    pub loss: LossConfig,
    pub step: u64,
    pub seed: u64,
    pub train: Option<TrainConfig>,
    pub param_count: usize,
    pub frozen: Vec<String>,
    pub optimizer: Option<OptimizerMeta>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub model: ConvVae<f32>,
    pub optimizer: Option<AdamState<f32>>,
}

impl Checkpoint {
    pub fn new(
        model: ConvVae<f32>,
        loss: LossConfig,
        step: u64,
        seed: u64,
        train: Option<TrainConfig>,
        optimizer: Option<AdamState<f32>>,
    ) -> Self {
        let meta = CheckpointMeta {
            latent_dim: model.arch.latent_dim,
            image_size: model.arch.image_size,
            architecture: model.arch.clone(),
            loss,
            step,
            seed,
            train,
            param_count: model.params.len(),
            frozen: model.params.iter().filter(|(_, e)| !e.trainable).map(|(n, _)| n.to_string()).collect(),
            optimizer: optimizer.as_ref().map(|o| OptimizerMeta { config: o.config, step: o.step }),
        };
        Self { meta, model, optimizer }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta).map_err(|e| Error::Format(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_u32(&mut out, meta.len())?;
        out.extend_from_slice(&meta);
        for (name, entry) in self.model.params.iter() {
            put_tensor(&mut out, name, &entry.value)?;
        }
        if let Some(opt) = &self.optimizer {
            for ((name, _), m) in self.model.params.iter().zip(&opt.m) {
                put_tensor(&mut out, &format!("adam.m/{name}"), m)?;
            }
            for ((name, _), v) in self.model.params.iter().zip(&opt.v) {
                put_tensor(&mut out, &format!("adam.v/{name}"), v)?;
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let meta_len = r.u32()? as usize;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?)
            .map_err(|e| Error::Format(format!("checkpoint metadata: {e}")))?;
        let mut params = ModelParams::new();
        for _ in 0..meta.param_count {
            let (name, t) = r.tensor()?;
            let trainable = !meta.frozen.contains(&name);
            params.insert(name, t, trainable).map_err(|e| Error::Format(e.to_string()))?;
        }
        let model = ConvVae::from_params(meta.architecture.clone(), params)
            .map_err(|e| Error::Format(format!("checkpoint does not fit its architecture: {e}")))?;
        let optimizer = match meta.optimizer {
            Some(om) => {
                let mut read_moments = |prefix: &str| -> Result<Vec<Tensor<f32>>> {
                    model
                        .params
                        .iter()
                        .map(|(name, entry)| {
                            let (got, t) = r.tensor()?;
                            if got != format!("{prefix}/{name}") || t.shape() != entry.value.shape() {
                                return Err(Error::Format(format!("unexpected optimizer tensor {got:?}")));
                            }
                            Ok(t)
                        })
                        .collect()
                };
                let m = read_moments("adam.m")?;
                let v = read_moments("adam.v")?;
                Some(AdamState { config: om.config, step: om.step, m, v })
            }
            None => None,
        };
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes after checkpoint", bytes.len() - r.pos)));
        }
        Ok(Self { meta, model, optimizer })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) -> Result<()> {
    put_u32(out, name.len())?;
    out.extend_from_slice(name.as_bytes());
    put_u32(out, t.rank())?;
    for &d in t.shape() {
        put_u32(out, d)?;
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("checkpoint truncated: needed {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn tensor(&mut self) -> Result<(String, Tensor<f32>)> {
        let len = self.u32()? as usize;
        let name = String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rank = self.u32()? as usize;
        let shape = (0..rank).map(|_| self.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let bytes = numel
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Format(format!("tensor {name:?} extents overflow")))?;
        let data = self.take(bytes)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Format(format!("tensor {name:?}: {e}")))?;
        Ok((name, t))
    }
}
