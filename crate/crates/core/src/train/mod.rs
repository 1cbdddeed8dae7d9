//! Loss functions, gradient checking and the training loop.

mod gradcheck;
mod loss;

pub use gradcheck::{check_gradient, grad_check, grad_check_at, relative_error, GradCheckReport, FD_STEP};
pub use loss::{loss_variant, multiscale_uncertainty_loss, LossConfig, LossMode};

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{FlowField, ImagePair};
use crate::error::{Error, Result};
use crate::net::graph::{self, Heads, Tape};
use crate::net::{pair_tensor, pyramid_from_heads, save_weights, Architecture, Tensor, Weights};
use crate::synthgen::{derive_seed, Sample};
use loss::{evaluate, Level64};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_epsilon: f64,
    /// Where per-epoch checkpoints and `history.jsonl` go, if anywhere.
    #[serde(default)]
    pub checkpoint_dir: Option<PathBuf>,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 32,
            epochs: 30,
            seed: 0,
            beta1: default_beta1(),
            beta2: default_beta2(),
            adam_epsilon: default_adam_eps(),
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    /// Settings used for single-core desk runs.
    pub fn desk() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 8,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::arg(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::arg("batch size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::arg("Adam betas must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// One line of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_epe: Option<f64>,
}

/// Adaptive-moment optimizer state over the flattened parameters.
#[derive(Clone, Debug)]
pub struct Adam {
    m: Vec<f32>,
    v: Vec<f32>,
    t: i32,
    beta1: f32,
    beta2: f32,
    eps: f32,
}

impl Adam {
    pub fn new(n: usize, cfg: &TrainConfig) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1: cfg.beta1 as f32,
            beta2: cfg.beta2 as f32,
            eps: cfg.adam_epsilon as f32,
        }
    }

    pub fn step(&mut self, weights: &mut Weights, grad: &[f32], lr: f32) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let mut k = 0;
        for p in &mut weights.params {
            for w in &mut p.data {
                let g = grad[k];
                self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
                self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
                let mh = self.m[k] / c1;
                let vh = self.v[k] / c2;
                *w -= lr * mh / (vh.sqrt() + self.eps);
                k += 1;
            }
        }
    }
}

fn to_chw(data: &[f64], h: usize, w: usize, c: usize) -> Tensor {
    let mut t = Tensor::zeros(c, h, w);
    let plane = h * w;
    for (p, px) in data.chunks_exact(c).enumerate() {
        for (ch, &v) in px.iter().enumerate() {
            t.data[ch * plane + p] = v as f32;
        }
    }
    t
}

/// Loss and flattened parameter gradient for one sample.
pub fn sample_gradient(weights: &Weights, pair: &ImagePair, gt: &FlowField, lcfg: &LossConfig) -> Result<(f64, Vec<f32>)> {
    let cfg = &weights.config;
    cfg.check_input(pair.height(), pair.width(), pair.channels())?;
    let arch = Architecture::new(cfg)?;
    let mut tape = Tape::new(weights);
    let input = tape.input(pair_tensor(pair));
    let heads = graph::run(&arch, &mut tape, input)?;
    let refs: Vec<_> = heads
        .iter()
        .map(|h| Heads {
            level: h.level,
            flow: tape.value(h.flow),
            unc: h.unc.map(|u| tape.value(u)),
        })
        .collect();
    let pyr = pyramid_from_heads(cfg.output_mode, &refs)?;
    let levels = Level64::from_pyramid(&pyr);
    let eval = evaluate(&levels, gt, lcfg, true)?;
    let mut seeds = Vec::new();
    for (i, h) in heads.iter().enumerate() {
        let l = &levels[i];
        seeds.push((h.flow, to_chw(&eval.flow_grads[i], l.h, l.w, 2)));
        if let (Some(id), Some(g)) = (h.unc, &eval.unc_grads[i]) {
            seeds.push((id, to_chw(g, l.h, l.w, 1)));
        }
    }
    let mut grads = weights.zeros_like();
    tape.backward(seeds, &mut grads);
    Ok((eval.value, grads.flat()))
}

/// Mean loss and summed-then-averaged gradient over a batch. Per-sample work
/// runs in parallel; the reduction order is fixed.
pub fn batch_gradient(weights: &Weights, batch: &[&Sample], lcfg: &LossConfig) -> Result<(f64, Vec<f32>)> {
    let per = crate::par::map(batch, |s| sample_gradient(weights, &s.pair(), &s.flow, lcfg));
    let n = weights.param_count();
    let mut total = vec![0.0f32; n];
    let mut loss = 0.0;
    for r in per {
        let (l, g) = r?;
        loss += l;
        for (a, b) in total.iter_mut().zip(&g) {
            *a += b;
        }
    }
    let inv = 1.0 / batch.len() as f32;
    for v in &mut total {
        *v *= inv;
    }
    Ok((loss / batch.len() as f64, total))
}

/// Mean end-point error of the float model over `samples`.
pub fn evaluate_epe(weights: &Weights, samples: &[Sample]) -> Result<f64> {
    let errs = crate::par::map(samples, |s| {
        let out = crate::net::forward(&s.pair(), weights)?;
        crate::metrics::epe(out.flow(), &s.flow)
    });
    let mut sum = 0.0;
    for e in errs {
        sum += e?;
    }
    Ok(sum / samples.len().max(1) as f64)
}

fn append_history(dir: &Path, rec: &EpochRecord) -> Result<()> {
    let path = dir.join("history.jsonl");
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    let line = serde_json::to_string(rec).expect("plain record");
    writeln!(f, "{line}").map_err(|e| Error::io(&path, e))
}

/// Mini-batch Adam training. The shuffle order of every epoch is derived from
/// `tcfg.seed`, so identical inputs give identical weights and history.
pub fn train(
    mut weights: Weights,
    train_set: &[Sample],
    val_set: &[Sample],
    tcfg: &TrainConfig,
    lcfg: &LossConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Weights, Vec<EpochRecord>)> {
    tcfg.validate()?;
    lcfg.validate()?;
    weights.check_layout()?;
    if train_set.is_empty() {
        return Err(Error::arg("training set is empty"));
    }
    if lcfg.mode.output_mode() != weights.config.output_mode {
        return Err(Error::arg(format!(
            "loss mode {:?} does not fit network output mode {:?}",
            lcfg.mode, weights.config.output_mode
        )));
    }
    for s in train_set.iter().chain(val_set) {
        weights.config.check_input(s.height(), s.width(), s.channels())?;
    }
    if let Some(dir) = &tcfg.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let hist = dir.join("history.jsonl");
        if hist.exists() {
            std::fs::remove_file(&hist).map_err(|e| Error::io(&hist, e))?;
        }
    }
    let mut adam = Adam::new(weights.param_count(), tcfg);
    let mut history = Vec::with_capacity(tcfg.epochs);
    let mut last_good: Option<PathBuf> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=tcfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(tcfg.seed, epoch as u64));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(tcfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let diverged = |_| Error::Diverged {
                epoch,
                last_good: last_good.clone(),
            };
            let (loss, grad) = batch_gradient(&weights, &batch, lcfg).map_err(|e| match e {
                Error::Numeric(_) => diverged(()),
                other => other,
            })?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(diverged(()));
            }
            loss_sum += loss * batch.len() as f64;
            adam.step(&mut weights, &grad, tcfg.learning_rate as f32);
        }
        if !weights.is_finite() {
            return Err(Error::Diverged { epoch, last_good });
        }
        let val_epe = if val_set.is_empty() {
            None
        } else {
            Some(evaluate_epe(&weights, val_set).map_err(|_| Error::Diverged {
                epoch,
                last_good: last_good.clone(),
            })?)
        };
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_epe,
        };
        if let Some(dir) = &tcfg.checkpoint_dir {
            let path = dir.join(format!("epoch_{epoch:03}.efnw"));
            save_weights(&weights, &path)?;
            append_history(dir, &rec)?;
            last_good = Some(path);
        }
        on_epoch(&rec);
        history.push(rec);
    }
    Ok((weights, history))
}
