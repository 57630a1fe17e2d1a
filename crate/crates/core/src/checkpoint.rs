//! Model checkpoints: magic, JSON header, raw little-endian f64 payload.
//!
//! Layout: `SIAMCKPT`, `u32` version, `u64` header length, header JSON
//! (model config plus one record per array), then the arrays back to back.

use crate::error::{Error, Result};
use crate::model::{ModelConfig, SiamModel};
use crate::nn::{ParamGroup, ParamKind};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"SIAMCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub group: ParamGroup,
    pub kind: ParamKind,
    /// Offset in values (not bytes) from the payload start.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub model: ModelConfig,
    pub arrays: Vec<ArrayRecord>,
    /// Free-form provenance (training config, seed).
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub fn encode(model: &SiamModel, meta: serde_json::Value) -> Result<Vec<u8>> {
    let mut arrays = Vec::new();
    let mut offset = 0;
    for (_, e) in model.store.iter() {
        arrays.push(ArrayRecord {
            name: e.name.clone(),
            shape: e.value.shape().to_vec(),
            dtype: "f64".into(),
            group: e.group,
            kind: e.kind,
            offset,
        });
        offset += e.value.numel();
    }
    let header = Header {
        model: model.cfg.clone(),
        arrays,
        meta,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(20 + json.len() + 8 * offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, e) in model.store.iter() {
        for v in e.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_header(bytes: &[u8]) -> Result<(Header, &[u8])> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let rest = &bytes[20..];
    if rest.len() < hlen {
        return Err(Error::Checkpoint("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&rest[..hlen]).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
    Ok((header, &rest[hlen..]))
}

/// Rebuilds the model from the header config and overwrites every array.
pub fn decode(bytes: &[u8]) -> Result<(SiamModel, Header)> {
    let (header, payload) = read_header(bytes)?;
    let mut model = SiamModel::build(&header.model, 0)?;
    if header.arrays.len() != model.store.len() {
        return Err(Error::Checkpoint(format!(
            "{} arrays stored, model has {}",
            header.arrays.len(),
            model.store.len()
        )));
    }
    for rec in &header.arrays {
        if rec.dtype != "f64" {
            return Err(Error::Checkpoint(format!("{}: dtype {} unsupported", rec.name, rec.dtype)));
        }
        let id = model
            .store
            .id(&rec.name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown array {}", rec.name)))?;
        if model.store.value(id).shape() != rec.shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "{}: stored shape {:?}, model expects {:?}",
                rec.name,
                rec.shape,
                model.store.value(id).shape()
            )));
        }
        let n: usize = rec.shape.iter().product();
        let (a, b) = (rec.offset * 8, (rec.offset + n) * 8);
        let raw = payload
            .get(a..b)
            .ok_or_else(|| Error::Checkpoint(format!("{}: payload truncated", rec.name)))?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        *model.store.value_mut(id) = Tensor::from_vec(&rec.shape, data)?;
    }
    Ok((model, header))
}

pub fn save(model: &SiamModel, path: &Path, meta: serde_json::Value) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, encode(model, meta)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(SiamModel, Header)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Names and sizes of the arrays under `prefix` (e.g. `head.l4`).
pub fn section<'a>(header: &'a Header, prefix: &str) -> Vec<&'a ArrayRecord> {
    header
        .arrays
        .iter()
        .filter(|r| r.name == prefix || r.name.starts_with(&format!("{prefix}.")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut m = SiamModel::build(&ModelConfig::desk(), 7).unwrap();
        let a = m.fusion_alpha;
        m.store.value_mut(a).data_mut()[1] = 0.1 + 0.2;
        let bytes = encode(&m, serde_json::json!({"seed": 7})).unwrap();
        let (back, h) = decode(&bytes).unwrap();
        assert_eq!(h.meta["seed"], 7);
        for ((_, x), (_, y)) in m.store.iter().zip(back.store.iter()) {
            assert_eq!(x.name, y.name);
            assert_eq!(
                x.value.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                y.value.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
        assert_eq!(section(&h, "fusion.alpha").len(), 1);
        assert!(!section(&h, "head.l3").is_empty());
    }

    #[test]
    fn corrupt_input_rejected() {
        assert!(matches!(decode(b"NOTACKPT0000000000000"), Err(Error::Checkpoint(_))));
        let m = SiamModel::build(&ModelConfig::desk_padfree(), 1).unwrap();
        let bytes = encode(&m, serde_json::Value::Null).unwrap();
        assert!(matches!(decode(&bytes[..bytes.len() - 3]), Err(Error::Checkpoint(_))));
    }
}
