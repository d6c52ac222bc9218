//! Binary checkpoint container.
//!
//! Layout: 8-byte magic `KDHTRCKP`, `u32` format version, `u64` header
//! length, a UTF-8 JSON header, then every tensor as little-endian `f32` in
//! header order. The header holds the model kind, its configuration, the
//! grapheme inventory, free-form metadata, the SHA-256 of the tensor bytes and
//! `(name, shape, offset)` per tensor, where `offset` counts elements.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Model;
use crate::error::{Error, IoContext, Result};
use crate::grapheme::GraphemeInventory;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"KDHTRCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    kind: String,
    dtype: String,
    config: serde_json::Value,
    inventory: GraphemeInventory,
    metadata: BTreeMap<String, serde_json::Value>,
    sha256: String,
    tensors: Vec<TensorEntry>,
}

/// A model restored from disk with the inventory it was trained on.
#[derive(Debug, Clone)]
pub struct Checkpoint<M> {
    pub model: M,
    pub inventory: GraphemeInventory,
    pub metadata: BTreeMap<String, serde_json::Value>,
}

pub fn save_checkpoint<M: Model>(
    path: &Path,
    model: &M,
    inventory: &GraphemeInventory,
    metadata: &BTreeMap<String, serde_json::Value>,
) -> Result<()> {
    let mut tensors = Vec::new();
    let mut data = Vec::new();
    let mut offset = 0;
    model.visit("", &mut |name, p| {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: p.value.shape().to_vec(),
            offset,
        });
        offset += p.len();
        for v in p.value.iter() {
            data.extend_from_slice(&v.to_le_bytes());
        }
    });
    let header = Header {
        kind: M::KIND.to_string(),
        dtype: "f32".into(),
        config: serde_json::to_value(model.config())?,
        inventory: inventory.clone(),
        metadata: metadata.clone(),
        sha256: hex::encode(Sha256::digest(&data)),
        tensors,
    };
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(20 + header.len() + data.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&data);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).at(dir)?;
    }
    fs::write(path, out).at(path)
}

pub fn load_checkpoint<M: Model>(path: &Path) -> Result<Checkpoint<M>> {
    let bytes = fs::read(path).at(path)?;
    let bad = |m: String| Error::Checkpoint(format!("{}: {m}", path.display()));
    if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let data_start = 20usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated header".into()))?;
    let header: Header = serde_json::from_slice(&bytes[20..data_start])?;
    if header.kind != M::KIND {
        return Err(bad(format!("holds a {} model, expected {}", header.kind, M::KIND)));
    }
    if header.dtype != "f32" {
        return Err(bad(format!("unsupported dtype {}", header.dtype)));
    }
    let data = &bytes[data_start..];
    if hex::encode(Sha256::digest(data)) != header.sha256 {
        return Err(bad("tensor data checksum mismatch".into()));
    }
    let floats: Vec<f32> = data
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let config: M::Config = serde_json::from_value(header.config)?;
    let mut model = M::build(&config, 0)?;
    let stored: BTreeMap<&str, &TensorEntry> = header.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
    let mut problem = None;
    let mut seen = 0;
    model.visit_mut("", &mut |name, p| {
        let Some(entry) = stored.get(name) else {
            problem.get_or_insert_with(|| format!("missing tensor {name}"));
            return;
        };
        let len: usize = entry.shape.iter().product();
        if entry.shape != p.value.shape() || entry.offset + len > floats.len() {
            problem.get_or_insert_with(|| format!("tensor {name} has shape {:?}", entry.shape));
            return;
        }
        let values = floats[entry.offset..entry.offset + len].to_vec();
        p.value = ArrayD::from_shape_vec(IxDyn(&entry.shape), values).expect("length checked");
        seen += 1;
    });
    if let Some(p) = problem {
        return Err(bad(p));
    }
    if seen != stored.len() {
        return Err(bad(format!("{} stored tensors but the model has {seen}", stored.len())));
    }
    Ok(Checkpoint {
        model,
        inventory: header.inventory,
        metadata: header.metadata,
    })
}
