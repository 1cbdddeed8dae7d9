//! Multi-scale encoder-decoder that predicts per-level flow (and
//! log-uncertainty) increments and accumulates them coarse to fine.

mod arch;
mod checkpoint;
pub(crate) mod graph;
pub(crate) mod kernels;
mod tensor;

pub use arch::{conv_flops, flops_and_params, init_weights, NetConfig, OutputMode, Param, Weights};
pub use checkpoint::{load_weights, save_weights};
pub use tensor::Tensor;

pub(crate) use arch::{Architecture, ConvSpec, TConvSpec};
pub(crate) use checkpoint::{read_archive, write_archive};

use crate::datamodel::{resize_interleaved, scale_flow_in_place, FlowField, ImagePair, UncertaintyField};
use crate::error::{Error, Result};
use graph::{FloatBackend, Heads};

/// Increments predicted at one pyramid level.
#[derive(Clone, Debug, PartialEq)]
pub struct PyramidLevel {
    pub flow_delta: FlowField,
    pub unc_delta: Option<UncertaintyField>,
}

/// Running estimate after adding one level's increment.
#[derive(Clone, Debug, PartialEq)]
pub struct Estimate {
    pub flow: FlowField,
    pub uncertainty: Option<UncertaintyField>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PyramidOutput {
    pub mode: OutputMode,
    /// Coarse to fine. Single-head modes hold one full-resolution level.
    pub levels: Vec<PyramidLevel>,
    /// Running estimate at each level.
    pub accumulated: Vec<Estimate>,
}

impl PyramidOutput {
    pub fn from_levels(mode: OutputMode, levels: Vec<PyramidLevel>) -> Result<Self> {
        let accumulated = accumulate_levels(&levels)?;
        Ok(PyramidOutput {
            mode,
            levels,
            accumulated,
        })
    }

    /// Full-resolution flow.
    pub fn flow(&self) -> &FlowField {
        &self.accumulated.last().expect("non-empty pyramid").flow
    }

    pub fn uncertainty(&self) -> Option<&UncertaintyField> {
        self.accumulated.last().expect("non-empty pyramid").uncertainty.as_ref()
    }

    /// What the flow head emits before the mode's constant offset is removed.
    pub fn direct_flow(&self) -> FlowField {
        let o = self.mode.flow_offset();
        self.flow().offset(o, o)
    }
}

fn level_dims(l: &PyramidLevel) -> (usize, usize) {
    (l.flow_delta.height(), l.flow_delta.width())
}

fn check_levels(levels: &[PyramidLevel]) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::arg("pyramid has no levels"));
    }
    let with_unc = levels[0].unc_delta.is_some();
    for (i, l) in levels.iter().enumerate() {
        let (h, w) = level_dims(l);
        if let Some(u) = &l.unc_delta {
            if (u.height(), u.width()) != (h, w) {
                return Err(Error::arg(format!(
                    "level {}: uncertainty {}x{} does not match flow {h}x{w}",
                    i + 1,
                    u.height(),
                    u.width()
                )));
            }
        }
        if l.unc_delta.is_some() != with_unc {
            return Err(Error::arg(format!("level {}: uncertainty present on some levels only", i + 1)));
        }
        if i > 0 {
            let (ph, pw) = level_dims(&levels[i - 1]);
            if (h, w) != (2 * ph, 2 * pw) {
                return Err(Error::arg(format!(
                    "level {} is {h}x{w}, expected twice level {} ({ph}x{pw})",
                    i + 1,
                    i
                )));
            }
        }
    }
    Ok(())
}

fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

fn narrow(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

/// The running sums are carried in f64 and rounded once per stored level, so
/// a large upsampled estimate cancelling against its increment loses nothing.
fn accumulate_levels(levels: &[PyramidLevel]) -> Result<Vec<Estimate>> {
    check_levels(levels)?;
    let mut out: Vec<Estimate> = Vec::with_capacity(levels.len());
    let mut flow: Vec<f64> = Vec::new();
    let mut unc: Option<Vec<f64>> = None;
    let (mut ph, mut pw) = (0, 0);
    for (i, l) in levels.iter().enumerate() {
        let (h, w) = level_dims(l);
        if i == 0 {
            flow = widen(l.flow_delta.data());
            unc = l.unc_delta.as_ref().map(|u| widen(u.data()));
        } else {
            let mut up = resize_interleaved(&flow, ph, pw, 2, h, w);
            scale_flow_in_place(&mut up, ph, pw, h, w);
            flow = up.iter().zip(l.flow_delta.data()).map(|(a, &b)| a + b as f64).collect();
            unc = match (&unc, &l.unc_delta) {
                (Some(pu), Some(du)) => {
                    let up = resize_interleaved(pu, ph, pw, 1, h, w);
                    Some(up.iter().zip(du.data()).map(|(a, &b)| a + b as f64).collect())
                }
                _ => None,
            };
        }
        out.push(Estimate {
            flow: FlowField::new(h, w, narrow(&flow))?,
            uncertainty: unc.as_ref().map(|u| UncertaintyField::new(h, w, narrow(u))).transpose()?,
        });
        (ph, pw) = (h, w);
    }
    Ok(out)
}

/// Sum per-level increments coarse to fine: each running estimate is the
/// previous one resized to the current level (flow values rescaled) plus the
/// current increment.
pub fn accumulate_pyramid(levels: &[PyramidLevel]) -> Result<(FlowField, Option<UncertaintyField>)> {
    let est = accumulate_levels(levels)?.pop().expect("non-empty");
    Ok((est.flow, est.uncertainty))
}

pub(crate) fn pair_tensor(pair: &ImagePair) -> Tensor {
    Tensor::from_hwc(pair.height(), pair.width(), pair.stacked_channels(), pair.data())
}

pub(crate) fn tensor_flow(t: &Tensor, offset: f32) -> Result<FlowField> {
    let mut d = t.to_hwc();
    if offset != 0.0 {
        for v in &mut d {
            *v -= offset;
        }
    }
    FlowField::new(t.h, t.w, d)
}

pub(crate) fn tensor_unc(t: &Tensor) -> Result<UncertaintyField> {
    UncertaintyField::new(t.h, t.w, t.data.clone())
}

/// Assemble a pyramid from raw head tensors.
pub(crate) fn pyramid_from_heads(mode: OutputMode, heads: &[Heads<&Tensor>]) -> Result<PyramidOutput> {
    let levels = heads
        .iter()
        .map(|h| {
            Ok(PyramidLevel {
                flow_delta: tensor_flow(h.flow, mode.flow_offset())?,
                unc_delta: h.unc.map(tensor_unc).transpose()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    PyramidOutput::from_levels(mode, levels)
}

/// Float inference on one frame pair.
pub fn forward(pair: &ImagePair, weights: &Weights) -> Result<PyramidOutput> {
    let cfg = &weights.config;
    cfg.check_input(pair.height(), pair.width(), pair.channels())?;
    let arch = Architecture::new(cfg)?;
    let mut b = FloatBackend { weights };
    let heads = graph::run(&arch, &mut b, pair_tensor(pair))?;
    let refs: Vec<_> = heads
        .iter()
        .map(|h| Heads {
            level: h.level,
            flow: &h.flow,
            unc: h.unc.as_ref(),
        })
        .collect();
    pyramid_from_heads(cfg.output_mode, &refs)
}

/// Float inference over a batch; samples run in parallel, results keep order.
pub fn forward_batch(pairs: &[ImagePair], weights: &Weights) -> Result<Vec<PyramidOutput>> {
    crate::par::map(pairs, |p| forward(p, weights)).into_iter().collect()
}
