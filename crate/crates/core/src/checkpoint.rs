//! Checkpoint file: one JSON manifest line, then every tensor as f32 LE in
//! name order.
//!
//! Tensor names are `param/<name>`, `best/<name>` (best validated
//! parameters), `adam.m/<name>` and `adam.v/<name>`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use aevit_tensor::{ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::data::Normalizer;
use crate::error::{CoreError, Result};
use crate::model::{Model, ModelConfig};
use crate::train::{AdamConfig, AdamW, StepRecord, TrainConfig, TrainState, ValidRecord};

const FORMAT: &str = "aevit-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngState {
    pub seed: u64,
    /// Stream of the next optimizer step.
    pub stream: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub normalizer: Normalizer,
    pub step: usize,
    pub rng: RngState,
    pub adam: AdamConfig,
    pub adam_t: u64,
    pub best: Option<ValidRecord>,
    pub history: Vec<StepRecord>,
    pub valid: Vec<ValidRecord>,
    tensors: Vec<TensorEntry>,
}

impl Manifest {
    pub fn n_tensors(&self) -> usize {
        self.tensors.len()
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum()
    }
}

/// A model with its normalization statistics and full training state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub normalizer: Normalizer,
    pub state: TrainState,
}

fn err(offset: u64, detail: impl Into<String>) -> CoreError {
    CoreError::Format {
        what: "checkpoint",
        offset,
        detail: detail.into(),
    }
}

impl Checkpoint {
    fn tensors(&self) -> BTreeMap<String, Tensor<f32>> {
        let mut out = BTreeMap::new();
        let st = &self.state;
        for (i, (_, name, t)) in st.params.iter().enumerate() {
            out.insert(format!("param/{name}"), t.clone());
            let shape = t.shape().to_vec();
            out.insert(format!("adam.m/{name}"), Tensor::new(shape.clone(), st.optim.m[i].clone()).unwrap());
            out.insert(format!("adam.v/{name}"), Tensor::new(shape, st.optim.v[i].clone()).unwrap());
        }
        if let Some((_, best)) = &st.best {
            for (_, name, t) in best.iter() {
                out.insert(format!("best/{name}"), t.clone());
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let tensors = self.tensors();
        let manifest = Manifest {
            format: FORMAT.into(),
            version: VERSION,
            model: self.model.clone(),
            train: self.train.clone(),
            normalizer: self.normalizer.clone(),
            step: self.state.step,
            rng: RngState {
                seed: self.train.seed,
                stream: self.state.step as u64,
            },
            adam: self.state.optim.cfg,
            adam_t: self.state.optim.t,
            best: self.state.best.as_ref().map(|(r, _)| *r),
            history: self.state.history.clone(),
            valid: self.state.valid.clone(),
            tensors: tensors
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let mut out = serde_json::to_vec(&manifest).map_err(|e| err(0, e.to_string()))?;
        out.push(b'\n');
        for t in tensors.values() {
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Write through a temporary file so an interrupted save never leaves a
    /// truncated checkpoint behind.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, bytes).map_err(|e| CoreError::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| CoreError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| CoreError::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Parse only the manifest line.
    pub fn read_manifest(bytes: &[u8]) -> Result<(Manifest, usize)> {
        let end = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| err(bytes.len() as u64, "manifest is not newline-terminated"))?;
        let m: Manifest = serde_json::from_slice(&bytes[..end])
            .map_err(|e| err(e.column().saturating_sub(1) as u64, format!("manifest: {e}")))?;
        if m.format != FORMAT || m.version != VERSION {
            return Err(err(0, format!("unsupported format {} v{}", m.format, m.version)));
        }
        if m.rng.seed != m.train.seed || m.rng.stream != m.step as u64 {
            return Err(err(0, "random state does not match the recorded seed and step"));
        }
        Ok((m, end + 1))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (m, mut offset) = Self::read_manifest(bytes)?;
        let mut tensors = BTreeMap::new();
        let mut prev: Option<&str> = None;
        for entry in &m.tensors {
            if prev.is_some_and(|p| p >= entry.name.as_str()) {
                return Err(err(0, format!("tensor {} is out of name order", entry.name)));
            }
            prev = Some(&entry.name);
            let n: usize = entry.shape.iter().product();
            let raw = bytes
                .get(offset..offset + 4 * n)
                .ok_or_else(|| err(offset as u64, format!("payload ends inside tensor {}", entry.name)))?;
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            tensors.insert(entry.name.clone(), Tensor::new(entry.shape.clone(), data)?);
            offset += 4 * n;
        }
        if offset != bytes.len() {
            return Err(err(offset as u64, "trailing bytes after the last tensor"));
        }

        let (_, template) = Model::new(&m.model, 0)?;
        let mut take = |key: String, expect: &[usize]| -> Result<Tensor<f32>> {
            let t = tensors
                .remove(&key)
                .ok_or_else(|| err(0, format!("missing tensor {key}")))?;
            if t.shape() != expect {
                return Err(err(0, format!("tensor {key} has shape {:?}, model expects {expect:?}", t.shape())));
            }
            Ok(t)
        };
        let mut params = template.clone();
        let mut optim = AdamW::new(m.adam, &template);
        optim.t = m.adam_t;
        for (i, (_, name, t)) in template.iter().enumerate() {
            params.set(name, take(format!("param/{name}"), t.shape())?)?;
            optim.m[i] = take(format!("adam.m/{name}"), t.shape())?.into_vec();
            optim.v[i] = take(format!("adam.v/{name}"), t.shape())?.into_vec();
        }
        let best = match m.best {
            Some(rec) => {
                let mut b: ParamStore<f32> = template.clone();
                for (_, name, t) in template.iter() {
                    b.set(name, take(format!("best/{name}"), t.shape())?)?;
                }
                Some((rec, b))
            }
            None => None,
        };
        if let Some(extra) = tensors.keys().next() {
            return Err(err(0, format!("tensor {extra} does not belong to the model")));
        }
        Ok(Checkpoint {
            model: m.model,
            train: m.train,
            normalizer: m.normalizer,
            state: TrainState {
                step: m.step,
                params,
                optim,
                best,
                history: m.history,
                valid: m.valid,
            },
        })
    }

    /// The model and its best validated parameters.
    pub fn inference(&self) -> Result<(Model, &ParamStore<f32>)> {
        let (model, _) = Model::new(&self.model, 0)?;
        Ok((model, self.state.best_params()))
    }
}
