//! Model checkpoints: a binary tensor file plus a JSON metadata sidecar.
//!
//! Binary layout, little-endian:
//!
//! ```text
//! "BFM1"  u32 version  u32 tensor_count
//! tensor_count × { u32 name_len, name, u32 ndim, ndim × u64 dims, Π dims × f64 }
//! ```
//!
//! The sidecar lives at `<path>.json` and holds the training configuration,
//! input dimensions and loss history.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::linalg::Tensor;
use crate::{Error, Result};

use super::attention::AttentionParams;
use super::model::{BlockFusionModel, FusionParams};
use super::train::{TrainConfig, TrainedFusion};

pub const MAGIC: &[u8; 4] = b"BFM1";
pub const VERSION: u32 = 1;
pub const META_FORMAT: &str = "rolefuse-fusion";

#[derive(Debug, Serialize, Deserialize)]
struct Metadata {
    format: String,
    version: u32,
    config: TrainConfig,
    entity_dim: usize,
    context_dim: usize,
    epochs_completed: usize,
    initial_loss: f64,
    loss_trace: Vec<f64>,
}

pub fn metadata_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn encode(params: &FusionParams) -> Vec<u8> {
    let named = params.named();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(named.len() as u32).to_le_bytes());
    for (name, t) in named {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in &t.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let bad = |m: &str| Error::Invalid(format!("checkpoint: {m}"));
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let end = pos.checked_add(n).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated"))?;
        let s = &bytes[pos..end];
        pos = end;
        Ok(s)
    };
    if take(4)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().unwrap());
    let version = u32_at(take(4)?);
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let count = u32_at(take(4)?) as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = u32_at(take(4)?) as usize;
        let name = std::str::from_utf8(take(len)?)
            .map_err(|_| bad("tensor name is not UTF-8"))?
            .to_string();
        let ndim = u32_at(take(4)?) as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize);
        }
        let n: usize = shape.iter().product();
        let raw = take(n.checked_mul(8).ok_or_else(|| bad("tensor too large"))?)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, Tensor { shape, data }));
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(out)
}

pub fn save(trained: &TrainedFusion, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(&trained.model.params)).map_err(|e| Error::io(path, e))?;
    let meta = Metadata {
        format: META_FORMAT.into(),
        version: VERSION,
        config: trained.config.clone(),
        entity_dim: trained.model.entity_dim,
        context_dim: trained.model.context_dim,
        epochs_completed: trained.loss_trace.len(),
        initial_loss: trained.initial_loss,
        loss_trace: trained.loss_trace.clone(),
    };
    let mp = metadata_path(path);
    let json = serde_json::to_vec_pretty(&meta).expect("metadata serializes");
    fs::write(&mp, json).map_err(|e| Error::io(&mp, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<TrainedFusion> {
    let path = path.as_ref();
    let mp = metadata_path(path);
    let meta_bytes = fs::read(&mp).map_err(|e| Error::io(&mp, e))?;
    let meta: Metadata = serde_json::from_slice(&meta_bytes).map_err(|e| Error::Parse {
        path: mp.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    if meta.format != META_FORMAT || meta.version != VERSION {
        return Err(Error::Invalid(format!(
            "{}: unsupported checkpoint {} v{}",
            mp.display(),
            meta.format,
            meta.version
        )));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut tensors: std::collections::HashMap<String, Tensor> = decode(&bytes)?.into_iter().collect();
    let mut take = |name: &str| {
        tensors
            .remove(name)
            .ok_or_else(|| Error::Invalid(format!("checkpoint: missing tensor {name}")))
    };
    let attention = if meta.config.attention {
        Some(AttentionParams {
            slots: meta.config.attention_slots,
            query: take("attn_query")?,
            key: take("attn_key")?,
            value: take("attn_value")?,
        })
    } else {
        None
    };
    let params = FusionParams {
        entity_w: take("entity_w")?,
        entity_b: take("entity_b")?,
        context_w: take("context_w")?,
        context_b: take("context_b")?,
        proj_entity: take("proj_entity")?,
        proj_context: take("proj_context")?,
        cores: take("cores")?,
        out_proj: take("out_proj")?,
        head_w: take("head_w")?,
        head_b: take("head_b")?,
        attention,
    };
    if let Some(extra) = tensors.keys().next() {
        return Err(Error::Invalid(format!("checkpoint: unexpected tensor {extra}")));
    }
    let model = BlockFusionModel {
        dims: meta.config.dims,
        entity_dim: meta.entity_dim,
        context_dim: meta.context_dim,
        dropout: meta.config.dropout,
        normalize: meta.config.normalize,
        params,
    };
    model.validate()?;
    Ok(TrainedFusion {
        model,
        config: meta.config,
        initial_loss: meta.initial_loss,
        loss_trace: meta.loss_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decode_rejects_garbage() {
        assert!(decode(b"NOPE").is_err());
        assert!(decode(b"BFM1\x01\x00\x00\x00\x01\x00\x00\x00").is_err());
        let mut v = Vec::new();
        v.extend_from_slice(MAGIC);
        v.extend_from_slice(&VERSION.to_le_bytes());
        v.extend_from_slice(&0u32.to_le_bytes());
        assert!(decode(&v).unwrap().is_empty());
        v.push(1);
        assert!(decode(&v).is_err());
    }
}
