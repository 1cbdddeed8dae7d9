//! Spatial chunking into the batch dimension with optional seam overlap.
//!
//! A frame of `H × W` is cut into `M × N` tiles. With overlap, each tile's
//! source window grows by `overlap` on every side that faces another tile;
//! windows touching the frame border are shifted inward instead of padded, so
//! every chunk has the same shape. Reassembly crops each output back to its
//! base tile and places it; nothing is blended.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::datamodel::{FlowField, ImagePair};
use crate::error::{Error, Result};
use crate::model::Model;

/// Rectangle `rows y0..y0+h`, `cols x0..x0+w`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub y0: usize,
    pub x0: usize,
    pub h: usize,
    pub w: usize,
}

impl Window {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.y0 && y < self.y0 + self.h && x >= self.x0 && x < self.x0 + self.w
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkInfo {
    /// Batch index, `row · N + col`.
    pub index: usize,
    pub row: usize,
    pub col: usize,
    /// Input region, frame coordinates.
    pub source: Window,
    /// Kept part of the chunk output, chunk coordinates.
    pub crop: Window,
    /// Where the crop lands, frame coordinates.
    pub dest: Window,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkPlan {
    pub height: usize,
    pub width: usize,
    pub rows: usize,
    pub cols: usize,
    pub overlap: usize,
    pub chunk_height: usize,
    pub chunk_width: usize,
    pub chunks: Vec<ChunkInfo>,
}

/// Chunk length and per-tile `(source start, base start)` along one axis.
fn plan_axis(len: usize, parts: usize, overlap: usize, axis: &str) -> Result<(usize, Vec<(usize, usize)>)> {
    if parts == 0 || len % parts != 0 {
        return Err(Error::arg(format!("{axis} {len} is not divisible into {parts} chunks")));
    }
    let base = len / parts;
    if parts > 1 && overlap >= base {
        return Err(Error::arg(format!(
            "overlap {overlap} must be smaller than the {axis} tile size {base}"
        )));
    }
    let interior_sides = parts.saturating_sub(1).min(2);
    let chunk = base + overlap * interior_sides;
    let spans = (0..parts)
        .map(|i| {
            let b0 = i * base;
            let start = b0.saturating_sub(overlap).min(len - chunk);
            (start, b0)
        })
        .collect();
    Ok((chunk, spans))
}

pub fn plan_chunks(height: usize, width: usize, rows: usize, cols: usize, overlap: usize) -> Result<ChunkPlan> {
    if overlap % 2 != 0 {
        return Err(Error::arg(format!("overlap must be even, got {overlap}")));
    }
    if height == 0 || width == 0 {
        return Err(Error::arg("frame must be non-empty"));
    }
    let (ch, ys) = plan_axis(height, rows, overlap, "height")?;
    let (cw, xs) = plan_axis(width, cols, overlap, "width")?;
    let (bh, bw) = (height / rows, width / cols);
    let mut chunks = Vec::with_capacity(rows * cols);
    for (row, &(sy, by)) in ys.iter().enumerate() {
        for (col, &(sx, bx)) in xs.iter().enumerate() {
            chunks.push(ChunkInfo {
                index: row * cols + col,
                row,
                col,
                source: Window { y0: sy, x0: sx, h: ch, w: cw },
                crop: Window { y0: by - sy, x0: bx - sx, h: bh, w: bw },
                dest: Window { y0: by, x0: bx, h: bh, w: bw },
            });
        }
    }
    Ok(ChunkPlan {
        height,
        width,
        rows,
        cols,
        overlap,
        chunk_height: ch,
        chunk_width: cw,
        chunks,
    })
}

impl ChunkPlan {
    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    /// Human-readable one-line summary.
    pub fn describe(&self) -> String {
        format!(
            "{}x{} chunks of {}x{}, overlap {}",
            self.rows, self.cols, self.chunk_height, self.chunk_width, self.overlap
        )
    }
}

/// Copy every chunk's source window, in batch order.
pub fn extract(pair: &ImagePair, plan: &ChunkPlan) -> Result<Vec<ImagePair>> {
    if (pair.height(), pair.width()) != (plan.height, plan.width) {
        return Err(Error::arg(format!(
            "pair is {}x{} but the plan expects {}x{}",
            pair.height(),
            pair.width(),
            plan.height,
            plan.width
        )));
    }
    plan.chunks
        .iter()
        .map(|c| pair.crop(c.source.y0, c.source.x0, c.source.h, c.source.w))
        .collect()
}

/// Crop-and-place of interleaved per-pixel records with `stride` values each.
pub fn reassemble_values(outputs: &[&[f32]], stride: usize, plan: &ChunkPlan) -> Result<Vec<f32>> {
    if outputs.len() != plan.len() {
        return Err(Error::arg(format!("expected {} chunk outputs, got {}", plan.len(), outputs.len())));
    }
    let chunk_len = plan.chunk_height * plan.chunk_width * stride;
    let mut out = vec![0.0f32; plan.height * plan.width * stride];
    for (c, src) in plan.chunks.iter().zip(outputs) {
        if src.len() != chunk_len {
            return Err(Error::arg(format!(
                "chunk {} output has {} values, expected {chunk_len}",
                c.index,
                src.len()
            )));
        }
        let run = c.crop.w * stride;
        for dy in 0..c.crop.h {
            let s = ((c.crop.y0 + dy) * plan.chunk_width + c.crop.x0) * stride;
            let d = ((c.dest.y0 + dy) * plan.width + c.dest.x0) * stride;
            out[d..d + run].copy_from_slice(&src[s..s + run]);
        }
    }
    Ok(out)
}

pub fn reassemble(outputs: &[FlowField], plan: &ChunkPlan) -> Result<FlowField> {
    for (i, f) in outputs.iter().enumerate() {
        if (f.height(), f.width()) != (plan.chunk_height, plan.chunk_width) {
            return Err(Error::arg(format!(
                "chunk {i} output is {}x{}, expected {}x{}",
                f.height(),
                f.width(),
                plan.chunk_height,
                plan.chunk_width
            )));
        }
    }
    let slices: Vec<&[f32]> = outputs.iter().map(FlowField::data).collect();
    FlowField::new(plan.height, plan.width, reassemble_values(&slices, 2, plan)?)
}

#[derive(Clone, Debug)]
pub struct ChunkedRun {
    pub flow: FlowField,
    /// Wall time of extraction, inference and reassembly.
    pub elapsed: Duration,
}

/// Extract, run the model on the chunk batch, reassemble.
pub fn chunked_infer(pair: &ImagePair, plan: &ChunkPlan, model: Model) -> Result<ChunkedRun> {
    let cfg = model.config();
    cfg.check_input(plan.chunk_height, plan.chunk_width, pair.channels())?;
    let start = Instant::now();
    let chunks = extract(pair, plan)?;
    let outputs = model.infer_batch(&chunks)?;
    let flow = reassemble(&outputs, plan)?;
    Ok(ChunkedRun {
        flow,
        elapsed: start.elapsed(),
    })
}
