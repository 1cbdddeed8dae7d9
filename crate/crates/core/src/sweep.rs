//! Overlap and seam experiments built on chunked inference.

use serde::{Deserialize, Serialize};

use crate::chunker::{chunked_infer, plan_chunks};
use crate::datamodel::FlowField;
use crate::error::{Error, Result};
use crate::metrics::{default_obstacle_threshold, epe, flow_magnitude_mask, iou};
use crate::model::Model;
use crate::par;
use crate::synthgen::{BallScene, Sample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapRow {
    pub overlap: usize,
    pub chunk_height: usize,
    pub chunk_width: usize,
    pub mean_epe: f64,
    /// Median single-worker wall time of one chunked frame, s.
    pub median_time: f64,
    pub fps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapSweep {
    pub rows: usize,
    pub cols: usize,
    pub full_frame_epe: f64,
    pub results: Vec<OverlapRow>,
}

/// EPE over `samples` and timed throughput on the first sample for every
/// overlap, with an `rows × cols` chunking.
pub fn overlap_sweep(model: Model, samples: &[Sample], rows: usize, cols: usize, overlaps: &[usize], reps: usize) -> Result<OverlapSweep> {
    let first = samples.first().ok_or_else(|| Error::arg("overlap sweep needs at least one sample"))?;
    if reps == 0 {
        return Err(Error::arg("reps must be at least 1"));
    }
    let (h, w) = (first.height(), first.width());
    let mut full = 0.0;
    for s in samples {
        full += epe(&model.infer(&s.pair())?, &s.flow)?;
    }
    let mut results = Vec::new();
    for &ov in overlaps {
        let plan = plan_chunks(h, w, rows, cols, ov)?;
        let mut total = 0.0;
        for s in samples {
            total += epe(&chunked_infer(&s.pair(), &plan, model)?.flow, &s.flow)?;
        }
        let pair = first.pair();
        let mut times = par::single_worker(|| -> Result<Vec<f64>> {
            chunked_infer(&pair, &plan, model)?;
            (0..reps).map(|_| Ok(chunked_infer(&pair, &plan, model)?.elapsed.as_secs_f64())).collect()
        })?;
        times.sort_by(f64::total_cmp);
        let median = times[times.len() / 2];
        results.push(OverlapRow {
            overlap: ov,
            chunk_height: plan.chunk_height,
            chunk_width: plan.chunk_width,
            mean_epe: total / samples.len() as f64,
            median_time: median,
            fps: 1.0 / median,
        });
    }
    Ok(OverlapSweep {
        rows,
        cols,
        full_frame_epe: full / samples.len() as f64,
        results,
    })
}

impl OverlapSweep {
    pub fn render(&self) -> String {
        let mut s = format!(
            "{}x{} chunks, full-frame EPE {:.4}\n{:>8} {:>12} {:>10} {:>10}\n",
            self.rows, self.cols, self.full_frame_epe, "overlap", "chunk", "EPE", "FPS"
        );
        for r in &self.results {
            s.push_str(&format!(
                "{:>8} {:>12} {:>10.4} {:>10.2}\n",
                r.overlap,
                format!("{}x{}", r.chunk_height, r.chunk_width),
                r.mean_epe,
                r.fps
            ));
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallRow {
    pub radius: f32,
    pub full_frame_iou: f64,
    /// `(overlap, IoU)` per chunked run.
    pub chunked_iou: Vec<(usize, f64)>,
}

/// Obstacle IoU for a seam-centered ball of each radius, full frame and
/// chunked at each overlap.
pub fn ball_sweep(model: Model, scene: &BallScene, radii: &[f32], speed: f32, rows: usize, cols: usize, overlaps: &[usize]) -> Result<Vec<BallRow>> {
    let plans = overlaps
        .iter()
        .map(|&ov| plan_chunks(scene.height, scene.width, rows, cols, ov))
        .collect::<Result<Vec<_>>>()?;
    radii
        .iter()
        .map(|&r| {
            let (pair, gt, mask) = scene.generate(r, true, speed)?;
            let thr = default_obstacle_threshold(&gt, &mask)?;
            let score = |flow: FlowField| iou(&flow_magnitude_mask(&flow, thr), &mask);
            let full_frame_iou = score(model.infer(&pair)?)?;
            let chunked_iou = plans
                .iter()
                .map(|p| Ok((p.overlap, score(chunked_infer(&pair, p, model)?.flow)?)))
                .collect::<Result<Vec<_>>>()?;
            Ok(BallRow {
                radius: r,
                full_frame_iou,
                chunked_iou,
            })
        })
        .collect()
}

pub fn render_ball_table(rows: &[BallRow]) -> String {
    let mut s = format!("{:>8} {:>10}", "radius", "full");
    if let Some(r) = rows.first() {
        for (ov, _) in &r.chunked_iou {
            s.push_str(&format!(" {:>10}", format!("ov {ov}")));
        }
    }
    s.push('\n');
    for r in rows {
        s.push_str(&format!("{:>8.1} {:>10.4}", r.radius, r.full_frame_iou));
        for (_, v) in &r.chunked_iou {
            s.push_str(&format!(" {v:>10.4}"));
        }
        s.push('\n');
    }
    s
}
