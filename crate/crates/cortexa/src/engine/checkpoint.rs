//! Checkpoint container.
//!
//! Layout: magic `CXA1`, a little-endian u32 length, a JSON header (model
//! description, tensor names/shapes, schedule, Adam hyperparameters, step
//! counter, metadata), then `f32` little-endian payloads — all parameters in
//! header order, then their first moments, then their second moments.

use super::optim::LrSchedule;
use super::tensor::Tensor;
use super::EngineError;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CXA1";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct CheckpointMeta {
    #[serde(default)]
    pub best_epoch: usize,
    #[serde(default)]
    pub best_val_mae: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slices_per_subject: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointHeader {
    /// Model description; owned by the model layer, opaque here.
    pub model: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
    pub schedule: LrSchedule,
    pub adam: AdamHyper,
    pub meta: CheckpointMeta,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<Tensor<f32>>,
    pub adam_m: Vec<Vec<f32>>,
    pub adam_v: Vec<Vec<f32>>,
}

impl Checkpoint {
    fn validate(&self) -> Result<(), EngineError> {
        let n = self.header.tensors.len();
        if self.params.len() != n || self.adam_m.len() != n || self.adam_v.len() != n {
            return Err(EngineError::BadCheckpoint(format!(
                "header lists {n} tensors, payload has {}/{}/{}",
                self.params.len(),
                self.adam_m.len(),
                self.adam_v.len()
            )));
        }
        for (entry, ((p, m), v)) in self
            .header
            .tensors
            .iter()
            .zip(self.params.iter().zip(&self.adam_m).zip(&self.adam_v))
        {
            let want: usize = entry.shape.iter().product();
            if p.len() != want || m.len() != want || v.len() != want {
                return Err(EngineError::BadCheckpoint(format!(
                    "tensor {} shape {:?} wants {want} values",
                    entry.name, entry.shape
                )));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, EngineError> {
        self.validate()?;
        let header = serde_json::to_vec(&self.header)
            .map_err(|e| EngineError::BadCheckpoint(e.to_string()))?;
        let payload_len: usize = self.params.iter().map(|t| t.len()).sum::<usize>() * 3 * 4;
        let mut out = Vec::with_capacity(8 + header.len() + payload_len);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        let mut push = |values: &[f32]| {
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        for p in &self.params {
            push(p.data());
        }
        for m in &self.adam_m {
            push(m);
        }
        for v in &self.adam_v {
            push(v);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EngineError> {
        if bytes.len() < 8 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(EngineError::BadCheckpoint("bad magic".into()));
        }
        let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let body = bytes
            .get(8..8 + hlen)
            .ok_or_else(|| EngineError::BadCheckpoint("truncated header".into()))?;
        let header: CheckpointHeader =
            serde_json::from_slice(body).map_err(|e| EngineError::BadCheckpoint(e.to_string()))?;
        let total: usize = header
            .tensors
            .iter()
            .map(|t| t.shape.iter().product::<usize>())
            .sum();
        let payload = &bytes[8 + hlen..];
        if payload.len() != total * 3 * 4 {
            return Err(EngineError::BadCheckpoint(format!(
                "payload is {} bytes, header wants {}",
                payload.len(),
                total * 3 * 4
            )));
        }
        let mut cursor = 0usize;
        let mut take = |n: usize| {
            let mut out = Vec::with_capacity(n);
            for i in 0..n {
                let at = cursor + i * 4;
                out.push(f32::from_le_bytes(payload[at..at + 4].try_into().unwrap()));
            }
            cursor += n * 4;
            out
        };
        let mut params = Vec::with_capacity(header.tensors.len());
        for entry in &header.tensors {
            let n: usize = entry.shape.iter().product();
            params.push(
                Tensor::new(entry.shape.clone(), take(n))
                    .map_err(|e| EngineError::BadCheckpoint(e.to_string()))?,
            );
        }
        let adam_m: Vec<Vec<f32>> = header
            .tensors
            .iter()
            .map(|e| take(e.shape.iter().product()))
            .collect();
        let adam_v: Vec<Vec<f32>> = header
            .tensors
            .iter()
            .map(|e| take(e.shape.iter().product()))
            .collect();
        let ck = Self {
            header,
            params,
            adam_m,
            adam_v,
        };
        ck.validate()?;
        Ok(ck)
    }
}

pub fn write_checkpoint(ck: &Checkpoint, path: &Path) -> Result<(), EngineError> {
    let bytes = ck.to_bytes()?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, EngineError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    Checkpoint::from_bytes(&bytes)
}
