//! Binary checkpoint archive.
//!
//! Layout: the 8-byte magic `HVANCKPT`, a little-endian `u32` format version,
//! a little-endian `u64` header length, the header as canonical JSON, then
//! every tensor as little-endian `f32` in the order the header lists them.
//! The header holds the model and training configuration, the optimizer
//! position, and a `(group, name, shape)` index of the tensors. Groups are
//! `param`, `adam_m`, and `adam_v`.

use std::fs;
use std::path::Path;

use hvan_tensor::{Adam, AdamConfig, ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{HvanError, Result};
use crate::network::{Model, ModelConfig};
use crate::train::TrainConfig;

pub const MAGIC: &[u8; 8] = b"HVANCKPT";
pub const VERSION: u32 = 1;

/// Position of a training run. Batch order is a pure function of the seed
/// and the epoch, so this is all that is needed to resume exactly.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainProgress {
    /// Optimizer steps taken so far.
    pub step: u64,
    /// Completed epochs.
    pub epoch: u64,
    /// Loss sum and step count of the epoch in progress.
    pub epoch_loss_sum: f64,
    pub epoch_steps: u64,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub params: ParamStore<f32>,
    pub optimizer: Adam<f32>,
    pub progress: TrainProgress,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    group: String,
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelConfig,
    train: TrainConfig,
    adam: AdamConfig,
    adam_step: u64,
    progress: TrainProgress,
    tensors: Vec<Entry>,
}

const GROUPS: [&str; 3] = ["param", "adam_m", "adam_v"];

impl Checkpoint {
    fn groups(&self) -> [&ParamStore<f32>; 3] {
        [
            &self.params,
            &self.optimizer.first_moment,
            &self.optimizer.second_moment,
        ]
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        for (group, store) in GROUPS.iter().zip(self.groups()) {
            for (name, t) in store {
                tensors.push(Entry {
                    group: group.to_string(),
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                });
            }
        }
        let header = serde_json::to_vec(&Header {
            model: self.model.clone(),
            train: self.train.clone(),
            adam: self.optimizer.config,
            adam_step: self.optimizer.step,
            progress: self.progress.clone(),
            tensors,
        })?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for store in self.groups() {
            for t in store.values() {
                out.extend(t.data().iter().flat_map(|v| v.to_le_bytes()));
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| HvanError::Data(format!("checkpoint: {m}"));
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic header".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(20..20 + hlen)
            .ok_or_else(|| bad("truncated header".into()))?;
        let header: Header = serde_json::from_slice(body)?;
        let mut data = &bytes[20 + hlen..];
        let mut stores: [ParamStore<f32>; 3] = Default::default();
        for e in header.tensors {
            let gi = GROUPS
                .iter()
                .position(|g| *g == e.group)
                .ok_or_else(|| bad(format!("unknown tensor group `{}`", e.group)))?;
            let n: usize = e.shape.iter().product();
            if data.len() < 4 * n {
                return Err(bad(format!("truncated tensor `{}`", e.name)));
            }
            let values = data[..4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            data = &data[4 * n..];
            stores[gi].insert(e.name, Tensor::from_vec(&e.shape, values)?);
        }
        if !data.is_empty() {
            return Err(bad(format!("{} trailing bytes", data.len())));
        }
        let [params, first_moment, second_moment] = stores;
        let ckpt = Self {
            model: header.model,
            train: header.train,
            params,
            optimizer: Adam {
                config: header.adam,
                step: header.adam_step,
                first_moment,
                second_moment,
            },
            progress: header.progress,
        };
        ckpt.check_parameters()?;
        Ok(ckpt)
    }

    /// The stored parameters must be exactly those the config builds.
    pub fn check_parameters(&self) -> Result<()> {
        let expected: ParamStore<f32> = Model::build(&self.model)?.init_with_seed(0);
        let same = expected.len() == self.params.len()
            && expected
                .iter()
                .zip(&self.params)
                .all(|((a, ta), (b, tb))| a == b && ta.shape() == tb.shape());
        if !same {
            return Err(HvanError::Data(
                "checkpoint parameters do not match its model configuration".into(),
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| HvanError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| HvanError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
