//! Checkpoints: a JSON descriptor (`name.json`) with the architecture, seed,
//! step counter and parameter table, plus a little-endian f32 blob
//! (`name.bin`) holding the parameters in table order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{ArchConfig, Model};
use crate::error::{Error, Result};
use crate::nn::ParamStore;

pub const FORMAT: &str = "freqfuse-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in scalars from the start of the blob.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointDescriptor {
    pub format: String,
    pub arch: ArchConfig,
    pub seed: u64,
    pub step: u64,
    pub epoch: usize,
    pub params: Vec<ParamRecord>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub descriptor: CheckpointDescriptor,
    pub model: Model,
}

impl Checkpoint {
    pub fn new(model: Model, seed: u64, step: u64, epoch: usize) -> Self {
        let mut offset = 0;
        let params = model
            .params()
            .iter()
            .map(|e| {
                let rec = ParamRecord {
                    name: e.name.clone(),
                    shape: e.shape.clone(),
                    offset,
                };
                offset += e.value.len();
                rec
            })
            .collect();
        Self {
            descriptor: CheckpointDescriptor {
                format: FORMAT.into(),
                arch: model.arch().clone(),
                seed,
                step,
                epoch,
                params,
            },
            model,
        }
    }

    /// Descriptor JSON and parameter blob bytes.
    pub fn to_bytes(&self) -> Result<(Vec<u8>, Vec<u8>)> {
        let json = serde_json::to_vec_pretty(&self.descriptor)?;
        let blob = self
            .model
            .params()
            .iter()
            .flat_map(|e| e.value.iter().flat_map(|&v| (v as f32).to_le_bytes()))
            .collect();
        Ok((json, blob))
    }

    pub fn from_bytes(json: &[u8], blob: &[u8]) -> Result<Self> {
        let descriptor: CheckpointDescriptor = serde_json::from_slice(json)?;
        if descriptor.format != FORMAT {
            return Err(Error::Config(format!(
                "unsupported checkpoint format {:?}",
                descriptor.format
            )));
        }
        if blob.len() % 4 != 0 {
            return Err(Error::Config("checkpoint blob is not a whole number of f32".into()));
        }
        let values: Vec<f64> = blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let mut store = ParamStore::new();
        for rec in &descriptor.params {
            let n: usize = rec.shape.iter().product();
            let slice = values.get(rec.offset..rec.offset + n).ok_or_else(|| {
                Error::Config(format!("checkpoint blob too short for {}", rec.name))
            })?;
            store.add(rec.name.clone(), rec.shape.clone(), slice.to_vec());
        }
        if store.scalar_count() != values.len() {
            return Err(Error::Config("checkpoint blob has trailing data".into()));
        }
        let model = Model::from_params(descriptor.arch.clone(), store)?;
        Ok(Self { descriptor, model })
    }

    /// Writes `path` (descriptor) and `path.with_extension("bin")` (blob).
    pub fn save(&self, path: &Path) -> Result<()> {
        let (json, blob) = self.to_bytes()?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, json).map_err(|e| Error::io(path, e))?;
        let bin = path.with_extension("bin");
        fs::write(&bin, blob).map_err(|e| Error::io(&bin, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let json = fs::read(path).map_err(|e| Error::io(path, e))?;
        let bin = path.with_extension("bin");
        let blob = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        Self::from_bytes(&json, &blob)
    }
}
