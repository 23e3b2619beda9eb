//! Single-file model checkpoints.
//!
//! Layout: 8-byte magic, u64 LE header length, a JSON header describing the
//! model config and every tensor (name, shape, element offset), then all
//! parameter values as little-endian f32 in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kan::Variant;
use crate::nn::Parameterized;
use crate::scalar::Scalar;
use crate::vit::{ModelConfig, ModelParams};

pub const MAGIC: &[u8; 8] = b"VIKANCK1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub variant: Variant,
    pub config: ModelConfig,
    pub tensors: Vec<TensorEntry>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn to_bytes<T: Scalar>(model: &ModelParams<T>) -> Result<Vec<u8>> {
    let params = model.params();
    let mut tensors = Vec::with_capacity(params.len());
    let mut offset = 0;
    for (name, t) in &params {
        tensors.push(TensorEntry { name: name.clone(), shape: t.shape().to_vec(), offset });
        offset += t.numel();
    }
    let header = Header { variant: model.config.ffn.variant, config: model.config.clone(), tensors };
    let json = serde_json::to_vec(&header).map_err(|e| bad(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + json.len() + 4 * offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &params {
        for &v in t.data().iter() {
            out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses and validates the header; returns it with the payload slice.
pub fn read_header(bytes: &[u8]) -> Result<(Header, &[u8])> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("missing magic"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let json = bytes.get(16..16usize.saturating_add(len)).ok_or_else(|| bad("header runs past end of file"))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| bad(format!("corrupt header: {e}")))?;
    if header.variant != header.config.ffn.variant {
        return Err(bad("header variant disagrees with its config"));
    }
    header.config.validate().map_err(|e| bad(format!("invalid config: {e}")))?;
    Ok((header, &bytes[16 + len..]))
}

/// Rebuilds the model described by the header and fills in its values.
/// With `expect`, a checkpoint of a different variant is rejected.
pub fn from_bytes<T: Scalar>(bytes: &[u8], expect: Option<Variant>) -> Result<ModelParams<T>> {
    let (header, payload) = read_header(bytes)?;
    if let Some(v) = expect {
        if v != header.variant {
            return Err(bad(format!("checkpoint holds a {} model, expected {v}", header.variant)));
        }
    }
    let model = ModelParams::<T>::new(&header.config)?;
    let params = model.params();
    if params.len() != header.tensors.len() {
        return Err(bad(format!("{} tensors in header, model has {}", header.tensors.len(), params.len())));
    }
    let total: usize = params.iter().map(|(_, t)| t.numel()).sum();
    if payload.len() != 4 * total {
        return Err(bad(format!("payload is {} bytes, expected {}", payload.len(), 4 * total)));
    }
    let mut expected_offset = 0;
    for ((name, t), entry) in params.iter().zip(&header.tensors) {
        if *name != entry.name || t.shape() != entry.shape.as_slice() || entry.offset != expected_offset {
            return Err(bad(format!("tensor entry {} does not match model tensor {name}", entry.name)));
        }
        let raw = &payload[4 * entry.offset..4 * (entry.offset + t.numel())];
        let mut finite = true;
        t.update_data(|dst| {
            for (d, c) in dst.iter_mut().zip(raw.chunks_exact(4)) {
                let v = f32::from_le_bytes(c.try_into().expect("4 bytes"));
                finite &= v.is_finite();
                *d = T::of(v as f64);
            }
        });
        if !finite {
            return Err(bad(format!("non-finite value in {name}")));
        }
        expected_offset += t.numel();
    }
    Ok(model)
}

pub fn save<T: Scalar>(model: &ModelParams<T>, path: &Path) -> Result<()> {
    let bytes = to_bytes(model)?;
    std::fs::write(path, bytes).map_err(|source| Error::File { path: path.to_path_buf(), source })
}

pub fn load<T: Scalar>(path: &Path, expect: Option<Variant>) -> Result<ModelParams<T>> {
    let bytes = std::fs::read(path).map_err(|source| Error::File { path: path.to_path_buf(), source })?;
    from_bytes(&bytes, expect)
}
