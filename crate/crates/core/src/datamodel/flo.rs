//! Middlebury `.flo` interchange: `"PIEH"`, little-endian `i32` width and
//! height, then row-major interleaved `(u, v)` as little-endian `f32`.

use std::fs;
use std::path::Path;

use super::FlowField;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PIEH";
const HEADER_LEN: usize = 12;
// Guards against absurd allocations from corrupt headers.
const MAX_DIM: i32 = 1 << 15;

pub fn flo_write(field: &FlowField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(field)).map_err(|e| Error::io(path, e))
}

pub fn flo_read(path: impl AsRef<Path>) -> Result<FlowField> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub(crate) fn encode(field: &FlowField) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + field.data().len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(field.width() as i32).to_le_bytes());
    out.extend_from_slice(&(field.height() as i32).to_le_bytes());
    for v in field.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub(crate) fn decode(bytes: &[u8]) -> Result<FlowField> {
    let fmt = |offset: usize, msg: String| Error::Format {
        offset: offset as u64,
        msg,
    };
    if bytes.len() < 4 {
        return Err(fmt(bytes.len(), "truncated before magic".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(fmt(0, format!("bad magic {:?}", String::from_utf8_lossy(&bytes[..4]))));
    }
    if bytes.len() < HEADER_LEN {
        return Err(fmt(bytes.len(), "truncated header".into()));
    }
    let word = |at: usize| i32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let (w, h) = (word(4), word(8));
    if !(1..=MAX_DIM).contains(&w) {
        return Err(fmt(4, format!("invalid width {w}")));
    }
    if !(1..=MAX_DIM).contains(&h) {
        return Err(fmt(8, format!("invalid height {h}")));
    }
    let (w, h) = (w as usize, h as usize);
    let expected = HEADER_LEN + w * h * 8;
    if bytes.len() < expected {
        return Err(fmt(
            bytes.len(),
            format!("truncated payload: expected {expected} bytes for {w}x{h}"),
        ));
    }
    if bytes.len() > expected {
        return Err(fmt(expected, "trailing bytes after payload".into()));
    }
    let mut data = Vec::with_capacity(w * h * 2);
    for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(fmt(HEADER_LEN + 4 * i, format!("non-finite value {v}")));
        }
        data.push(v);
    }
    FlowField::new(h, w, data)
}
