//! Host throughput measurement.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::ImagePair;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::par;

pub const MIN_REPS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    /// Stacked input channels, `2C`.
    pub channels: usize,
    pub quantized: bool,
    pub warmup: usize,
    pub reps: usize,
    /// Wall time of each timed call, s.
    pub times: Vec<f64>,
    pub median: f64,
    /// Interquartile range of `times`, s.
    pub iqr: f64,
    /// Frames per second: `batch / median`.
    pub fps: f64,
}

impl BenchResult {
    pub fn pixels_per_call(&self) -> usize {
        self.batch * self.height * self.width
    }
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Seeded random input batch.
pub fn random_batch(batch: usize, height: usize, width: usize, channels: usize, seed: u64) -> Result<Vec<ImagePair>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..batch)
        .map(|_| {
            let data = (0..height * width * 2 * channels).map(|_| rng.random_range(0..=255u8) as f32 / 255.0).collect();
            ImagePair::from_stacked(height, width, channels, data)
        })
        .collect()
}

/// Time `reps` calls on a fixed input batch after `warmup` untimed calls,
/// restricted to one worker.
pub fn throughput(model: Model, batch: usize, height: usize, width: usize, warmup: usize, reps: usize, seed: u64) -> Result<BenchResult> {
    if reps < MIN_REPS {
        return Err(Error::arg(format!("need at least {MIN_REPS} repetitions, got {reps}")));
    }
    if batch == 0 {
        return Err(Error::arg("batch must be at least 1"));
    }
    let cfg = model.config();
    cfg.check_input(height, width, cfg.frame_channels)?;
    let inputs = random_batch(batch, height, width, cfg.frame_channels, seed)?;
    let times = par::single_worker(|| -> Result<Vec<f64>> {
        for _ in 0..warmup {
            model.infer_batch(&inputs)?;
        }
        let mut times = Vec::with_capacity(reps);
        for _ in 0..reps {
            let t = Instant::now();
            std::hint::black_box(model.infer_batch(&inputs)?);
            times.push(t.elapsed().as_secs_f64());
        }
        Ok(times)
    })?;
    let mut sorted = times.clone();
    sorted.sort_by(f64::total_cmp);
    let median = quantile(&sorted, 0.5);
    Ok(BenchResult {
        batch,
        height,
        width,
        channels: 2 * cfg.frame_channels,
        quantized: model.is_quantized(),
        warmup,
        reps,
        iqr: quantile(&sorted, 0.75) - quantile(&sorted, 0.25),
        fps: batch as f64 / median,
        median,
        times,
    })
}

/// Shapes `f²×(H/f)×(W/f)` for each factor `f`: the same pixel count per call.
pub fn equal_pixel_shapes(height: usize, width: usize, factors: &[usize]) -> Result<Vec<(usize, usize, usize)>> {
    factors
        .iter()
        .map(|&f| {
            if f == 0 || height % f != 0 || width % f != 0 {
                return Err(Error::arg(format!("{height}x{width} is not divisible by {f}")));
            }
            Ok((f * f, height / f, width / f))
        })
        .collect()
}

pub fn equal_pixel_sweep(model: Model, height: usize, width: usize, factors: &[usize], warmup: usize, reps: usize, seed: u64) -> Result<Vec<BenchResult>> {
    equal_pixel_shapes(height, width, factors)?
        .into_iter()
        .map(|(b, h, w)| throughput(model, b, h, w, warmup, reps, seed))
        .collect()
}

pub fn host_descriptor() -> String {
    let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!(
        "{}-{} logical_cpus={} parallel_feature={} timing_workers=1",
        std::env::consts::OS,
        std::env::consts::ARCH,
        cpus,
        cfg!(feature = "parallel")
    )
}

/// Table of results with the host line and the pixels per call.
pub fn render_table(results: &[BenchResult]) -> String {
    let mut s = format!("# host: {}\n", host_descriptor());
    s.push_str(&format!(
        "{:<20} {:>6} {:>12} {:>10} {:>10} {:>10}\n",
        "input", "quant", "pixels/call", "median ms", "IQR ms", "FPS"
    ));
    for r in results {
        s.push_str(&format!(
            "{:<20} {:>6} {:>12} {:>10.2} {:>10.2} {:>10.1}\n",
            format!("{}x{}x{}x{}", r.batch, r.height, r.width, r.channels),
            if r.quantized { "yes" } else { "no" },
            r.pixels_per_call(),
            r.median * 1e3,
            r.iqr * 1e3,
            r.fps
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{init_weights, NetConfig};

    fn tiny() -> crate::net::Weights {
        let cfg = NetConfig {
            base_channels: 4,
            blocks_per_stage: 1,
            ..Default::default()
        };
        init_weights(&cfg, 0).unwrap()
    }

    #[test]
    fn records_every_rep() {
        let w = tiny();
        let r = throughput(Model::Float(&w), 2, 16, 16, 1, 5, 0).unwrap();
        assert_eq!(r.times.len(), 5);
        assert!(r.fps > 0.0);
        assert!((r.fps - 2.0 / r.median).abs() < 1e-9);
        assert!(r.iqr >= 0.0);
        assert!(throughput(Model::Float(&w), 1, 16, 16, 0, 4, 0).unwrap_err().is_argument());
        assert!(throughput(Model::Float(&w), 1, 12, 16, 0, 5, 0).unwrap_err().is_argument());
    }

    #[test]
    fn equal_pixel_sweep_keeps_pixel_count() {
        let shapes = equal_pixel_shapes(64, 96, &[1, 2, 4]).unwrap();
        assert_eq!(shapes, vec![(1, 64, 96), (4, 32, 48), (16, 16, 24)]);
        assert!(shapes.iter().all(|(b, h, w)| b * h * w == 64 * 96));
        let w = tiny();
        let rs = equal_pixel_sweep(Model::Float(&w), 32, 32, &[1, 2], 0, 5, 1).unwrap();
        let table = render_table(&rs);
        assert!(table.contains("4x16x16x6") && table.contains("host:"));
    }

    #[test]
    fn quantile_interpolates() {
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 0.5), 2.5);
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.25), 2.0);
    }
}
