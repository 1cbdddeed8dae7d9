//! Single-file archives: 4-byte magic, u32 format version, u32 header length,
//! JSON header, then a raw little-endian payload.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::arch::{NetConfig, Param, Weights};
use crate::error::{Error, Result};

pub(crate) const FORMAT_VERSION: u32 = 1;
const WEIGHTS_MAGIC: &[u8; 4] = b"EFNW";

pub(crate) fn write_archive(path: &Path, magic: &[u8; 4], header: &impl Serialize, payload: &[u8]) -> Result<()> {
    let head = serde_json::to_vec(header).map_err(|e| Error::arg(format!("header encode: {e}")))?;
    let mut buf = Vec::with_capacity(12 + head.len() + payload.len());
    buf.extend_from_slice(magic);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(head.len() as u32).to_le_bytes());
    buf.extend_from_slice(&head);
    buf.extend_from_slice(payload);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Returns the decoded header, the payload and the payload's byte offset.
pub(crate) fn read_archive<H: for<'de> Deserialize<'de>>(path: &Path, magic: &[u8; 4]) -> Result<(H, Vec<u8>, u64)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let fmt = |offset: usize, msg: String| Error::Format {
        offset: offset as u64,
        msg,
    };
    if bytes.len() < 12 {
        return Err(fmt(bytes.len(), "truncated archive header".into()));
    }
    if &bytes[..4] != magic {
        return Err(fmt(
            0,
            format!("bad magic {:?}, expected {:?}", String::from_utf8_lossy(&bytes[..4]), String::from_utf8_lossy(magic)),
        ));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(fmt(4, format!("unsupported format version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let end = 12usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| fmt(8, format!("header length {hlen} exceeds file")))?;
    let header = serde_json::from_slice(&bytes[12..end]).map_err(|e| fmt(12 + e.column(), format!("bad header: {e}")))?;
    Ok((header, bytes[end..].to_vec(), end as u64))
}

#[derive(Serialize, Deserialize)]
pub(crate) struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct WeightsHeader {
    config: NetConfig,
    tensors: Vec<TensorEntry>,
}

/// Write float weights with their network config.
pub fn save_weights(weights: &Weights, path: impl AsRef<Path>) -> Result<()> {
    let header = WeightsHeader {
        config: weights.config.clone(),
        tensors: weights
            .params
            .iter()
            .map(|p| TensorEntry {
                name: p.name.clone(),
                shape: p.shape.clone(),
            })
            .collect(),
    };
    let payload: Vec<u8> = weights.params.iter().flat_map(|p| p.data.iter().flat_map(|v| v.to_le_bytes())).collect();
    write_archive(path.as_ref(), WEIGHTS_MAGIC, &header, &payload)
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<Weights> {
    let (header, payload, base): (WeightsHeader, _, _) = read_archive(path.as_ref(), WEIGHTS_MAGIC)?;
    let mut off = 0usize;
    let mut params = Vec::with_capacity(header.tensors.len());
    for t in header.tensors {
        let n: usize = t.shape.iter().product();
        let bytes = payload.get(off..off + 4 * n).ok_or_else(|| Error::Format {
            offset: base + payload.len() as u64,
            msg: format!("payload truncated in tensor '{}'", t.name),
        })?;
        let data = bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
        off += 4 * n;
        params.push(Param {
            name: t.name,
            shape: t.shape,
            data,
        });
    }
    if off != payload.len() {
        return Err(Error::Format {
            offset: base + off as u64,
            msg: format!("{} trailing payload bytes", payload.len() - off),
        });
    }
    let w = Weights {
        config: header.config,
        params,
    };
    w.check_layout()?;
    Ok(w)
}
