use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, Model, ModelConfig, TrainConfig};
use crate::data::Vocab;
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VPAC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to caption with, or resume training of, a model.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub vocab: Vocab,
    /// Optimizer updates applied so far.
    pub step: u64,
    pub params: ParamStore<f32>,
    pub adam: Option<AdamState>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ShapeEntry {
    name: String,
    dims: Vec<usize>,
}

/// Batch order is a pure function of the seed and epoch, so the seed and
/// step counter are the whole RNG state.
#[derive(Debug, Serialize, Deserialize)]
struct RngState {
    seed: u64,
    step: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    train: TrainConfig,
    vocab: Vocab,
    step: u64,
    rng: RngState,
    adam_step: Option<u64>,
    shapes: Vec<ShapeEntry>,
}

const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";

impl Checkpoint {
    /// The captioning model held by this checkpoint.
    pub fn model(&self) -> Model {
        Model {
            config: self.model.clone(),
            vocab: self.vocab.clone(),
            params: self.params.clone(),
            variant: self.train.variant,
        }
    }

    fn arrays(&self) -> Vec<(String, &Tensor<f32>)> {
        let mut out: Vec<(String, &Tensor<f32>)> = self.params.iter().map(|(n, t)| (n.to_string(), t)).collect();
        if let Some(a) = &self.adam {
            for (prefix, list) in [(ADAM_M, &a.m), (ADAM_V, &a.v)] {
                for ((n, _), t) in self.params.iter().zip(list) {
                    out.push((format!("{prefix}{n}"), t));
                }
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let arrays = self.arrays();
        let header = Header {
            model: self.model.clone(),
            train: self.train.clone(),
            vocab: self.vocab.clone(),
            step: self.step,
            rng: RngState {
                seed: self.train.seed,
                step: self.step,
            },
            adam_step: self.adam.as_ref().map(|a| a.t),
            shapes: arrays
                .iter()
                .map(|(n, t)| ShapeEntry {
                    name: n.clone(),
                    dims: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
        let payload: usize = arrays.iter().map(|(_, t)| t.len() * 4).sum();
        let mut out = Vec::with_capacity(16 + json.len() + payload);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in arrays {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Format("missing VPAC magic bytes".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = &bytes[16..];
        if hlen > body.len() {
            return Err(Error::Format(format!(
                "truncated header: {hlen} bytes declared, {} present",
                body.len()
            )));
        }
        let header: Header =
            serde_json::from_slice(&body[..hlen]).map_err(|e| Error::Format(format!("header: {e}")))?;
        let vocab = header.vocab.reindex()?;
        header.model.validate()?;
        let reference = header.model.init_params(vocab.len(), header.train.seed)?;

        let n_params = reference.len();
        let expected_entries = if header.adam_step.is_some() {
            3 * n_params
        } else {
            n_params
        };
        if header.shapes.len() != expected_entries {
            return Err(Error::Format(format!(
                "shape table has {} entries, model defines {expected_entries}",
                header.shapes.len()
            )));
        }
        for (i, e) in header.shapes.iter().enumerate() {
            let (k, prefix) = (i % n_params, ["", ADAM_M, ADAM_V][i / n_params]);
            let want_name = format!("{prefix}{}", reference.name_at(k));
            let want_dims = reference.tensor_at(k).shape();
            if e.name != want_name || e.dims != want_dims {
                return Err(Error::Format(format!(
                    "shape table entry `{}` {:?} does not match model entry `{want_name}` {:?}",
                    e.name, e.dims, want_dims
                )));
            }
        }
        let need: usize = header.shapes.iter().map(|e| e.dims.iter().product::<usize>() * 4).sum();
        let payload = &body[hlen..];
        if payload.len() < need {
            return Err(Error::Format(format!(
                "truncated payload: {need} bytes expected, {} present",
                payload.len()
            )));
        }
        if payload.len() > need {
            return Err(Error::Format(format!(
                "{} trailing bytes after payload",
                payload.len() - need
            )));
        }
        let mut arrays = Vec::with_capacity(header.shapes.len());
        let mut off = 0;
        for e in &header.shapes {
            let n: usize = e.dims.iter().product();
            let data: Vec<f32> = payload[off..off + 4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            off += 4 * n;
            arrays.push(Tensor::new(e.dims.clone(), data)?);
        }
        let mut rest = arrays.split_off(n_params);
        let mut params = ParamStore::new(header.train.seed);
        for (k, t) in arrays.into_iter().enumerate() {
            params.insert(reference.name_at(k), t)?;
        }
        let adam = header.adam_step.map(|t| {
            let v = rest.split_off(n_params);
            AdamState { t, m: rest, v }
        });
        Ok(Self {
            model: header.model,
            train: header.train,
            vocab,
            step: header.step,
            params,
            adam,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, ckpt.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
