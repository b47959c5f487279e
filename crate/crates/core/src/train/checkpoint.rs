//! Binary checkpoint container.
//!
//! Layout: 8-byte magic `PHILAB01`, `u32` format version, `u64` header
//! length, the JSON header, then parameters, Adam first moments and Adam
//! second moments as little-endian `f32`, and finally a 32-byte SHA-256 of
//! everything before it. The checksum is verified before anything is
//! decoded, so a truncated or corrupted file never yields a partial load.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AdamConfig, OptimizerState, TrainState};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, SeqModel};
use crate::params::Group;

pub const MAGIC: &[u8; 8] = b"PHILAB01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
    pub group: Group,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub version: u32,
    pub model: ModelConfig,
    pub tensors: Vec<TensorInfo>,
    pub num_params: usize,
    /// Optimizer updates applied; also the index of the next data and noise
    /// stream, which is all the random state training carries.
    pub step: u64,
    pub root_seed: u64,
    pub adam: AdamConfig,
    pub config: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: Header,
    pub params: Vec<f32>,
    pub adam_m: Vec<f32>,
    pub adam_v: Vec<f32>,
}

impl Checkpoint {
    pub fn from_state(model: &SeqModel, state: &TrainState, root_seed: u64, config: Option<serde_json::Value>) -> Self {
        let tensors = model
            .layout
            .entries()
            .iter()
            .map(|e| TensorInfo {
                name: e.name.clone(),
                rows: e.slot.rows,
                cols: e.slot.cols,
                offset: e.slot.offset,
                group: e.group,
            })
            .collect();
        Checkpoint {
            header: Header {
                version: FORMAT_VERSION,
                model: model.config.clone(),
                tensors,
                num_params: state.params.len(),
                step: state.step,
                root_seed,
                adam: state.opt.hyper,
                config,
            },
            params: state.params.clone(),
            adam_m: state.opt.m.clone(),
            adam_v: state.opt.v.clone(),
        }
    }

    pub fn into_state(self) -> TrainState {
        TrainState {
            opt: OptimizerState {
                m: self.adam_m,
                v: self.adam_v,
                step: self.header.step,
                hyper: self.header.adam,
            },
            params: self.params,
            step: self.header.step,
        }
    }

    /// Errors unless the tensor table matches `model` exactly.
    pub fn check_model(&self, model: &SeqModel) -> Result<()> {
        if self.header.model != model.config {
            return Err(Error::Checkpoint("model config differs from the checkpoint's".into()));
        }
        let entries = model.layout.entries();
        if entries.len() != self.header.tensors.len() {
            return Err(Error::Checkpoint("tensor count differs from the model".into()));
        }
        for (e, t) in entries.iter().zip(&self.header.tensors) {
            if e.name != t.name || e.slot.rows != t.rows || e.slot.cols != t.cols || e.slot.offset != t.offset {
                return Err(Error::Checkpoint(format!("tensor `{}` does not match the model", t.name)));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let n = self.params.len();
        if self.adam_m.len() != n || self.adam_v.len() != n || self.header.num_params != n {
            return Err(Error::Checkpoint("buffer lengths disagree".into()));
        }
        let mut out = Vec::with_capacity(20 + header.len() + 12 * n + 32);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for buf in [&self.params, &self.adam_m, &self.adam_v] {
            for v in buf.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 + 32 {
            return Err(bad("file too short"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("checksum mismatch (truncated or corrupted file)"));
        }
        if &body[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let hlen = u64::from_le_bytes(body[12..20].try_into().unwrap()) as usize;
        let rest = &body[20..];
        if rest.len() < hlen {
            return Err(bad("header length exceeds file"));
        }
        let header: Header = serde_json::from_slice(&rest[..hlen])?;
        let data = &rest[hlen..];
        let n = header.num_params;
        if data.len() != 12 * n {
            return Err(bad("tensor data size does not match the header"));
        }
        let read = |k: usize| -> Vec<f32> {
            data[4 * n * k..4 * n * (k + 1)]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect()
        };
        Ok(Checkpoint {
            params: read(0),
            adam_m: read(1),
            adam_v: read(2),
            header,
        })
    }
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    crate::fsio::write_atomic(path, &ck.to_bytes()?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    Checkpoint::from_bytes(&std::fs::read(path)?)
}
