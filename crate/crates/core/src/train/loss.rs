//! Multi-scale uncertainty-weighted L1 loss and its single-scale variants.
//!
//! Everything is evaluated in f64 so finite-difference checks are meaningful.

use serde::{Deserialize, Serialize};

use crate::datamodel::{resize_interleaved, resize_interleaved_adjoint, scale_flow_in_place, FlowField};
use crate::error::{Error, Result};
use crate::net::{OutputMode, PyramidOutput};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    L1,
    L1Shift50,
    Multiscale,
    MultiscaleUncertainty,
}

impl LossMode {
    /// Network head layout this loss supervises.
    pub fn output_mode(self) -> OutputMode {
        match self {
            LossMode::L1 => OutputMode::Raw,
            LossMode::L1Shift50 => OutputMode::Shift50,
            LossMode::Multiscale => OutputMode::Multiscale,
            LossMode::MultiscaleUncertainty => OutputMode::MultiscaleUncertainty,
        }
    }

    pub fn for_output(mode: OutputMode) -> Self {
        match mode {
            OutputMode::Raw => LossMode::L1,
            OutputMode::Shift50 => LossMode::L1Shift50,
            OutputMode::Multiscale => LossMode::Multiscale,
            OutputMode::MultiscaleUncertainty => LossMode::MultiscaleUncertainty,
        }
    }
}

impl std::str::FromStr for LossMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(LossMode::for_output(s.parse()?))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Added to the log-uncertainty inside the divisor's softplus.
    pub epsilon: f64,
    pub mode: LossMode,
    /// Per supervised level, coarse to fine. Empty means all ones.
    #[serde(default)]
    pub level_weights: Vec<f64>,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            epsilon: 1e-3,
            mode: LossMode::MultiscaleUncertainty,
            level_weights: Vec::new(),
        }
    }
}

impl LossConfig {
    pub fn with_mode(mode: LossMode) -> Self {
        LossConfig {
            mode,
            ..Default::default()
        }
    }

    /// `epsilon = 0` is accepted so closed forms can be checked exactly.
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::arg(format!("epsilon must be finite and >= 0, got {}", self.epsilon)));
        }
        if self.level_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::arg("level weights must be finite and non-negative"));
        }
        Ok(())
    }
}

pub(crate) fn softplus(a: f64) -> f64 {
    // log(1 + e^a) without overflow
    a.max(0.0) + (-a.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

/// One pyramid level in f64, interleaved.
#[derive(Clone, Debug)]
pub(crate) struct Level64 {
    pub h: usize,
    pub w: usize,
    pub flow: Vec<f64>,
    pub unc: Option<Vec<f64>>,
}

impl Level64 {
    pub fn from_pyramid(p: &PyramidOutput) -> Vec<Level64> {
        p.levels
            .iter()
            .map(|l| Level64 {
                h: l.flow_delta.height(),
                w: l.flow_delta.width(),
                flow: l.flow_delta.data().iter().map(|&v| v as f64).collect(),
                unc: l.unc_delta.as_ref().map(|u| u.data().iter().map(|&v| v as f64).collect()),
            })
            .collect()
    }
}

/// Loss value and its gradient with respect to every level's increments.
#[derive(Clone, Debug)]
pub(crate) struct LossEval {
    pub value: f64,
    pub flow_grads: Vec<Vec<f64>>,
    pub unc_grads: Vec<Option<Vec<f64>>>,
    /// Sign of every supervised residual component, used to locate L1 kinks.
    pub signs: Vec<i8>,
}

fn upsample(src: &[f64], ph: usize, pw: usize, h: usize, w: usize, flow: bool) -> Vec<f64> {
    let c = if flow { 2 } else { 1 };
    let mut up = resize_interleaved(src, ph, pw, c, h, w);
    if flow {
        scale_flow_in_place(&mut up, ph, pw, h, w);
    }
    up
}

fn upsample_adjoint(g: &[f64], ph: usize, pw: usize, h: usize, w: usize, flow: bool) -> Vec<f64> {
    let c = if flow { 2 } else { 1 };
    let mut g = g.to_vec();
    if flow {
        scale_flow_in_place(&mut g, ph, pw, h, w);
    }
    resize_interleaved_adjoint(&g, ph, pw, c, h, w)
}

/// Core evaluator shared by every loss mode.
pub(crate) fn evaluate(levels: &[Level64], gt: &FlowField, cfg: &LossConfig, need_grad: bool) -> Result<LossEval> {
    cfg.validate()?;
    let n_lv = levels.len();
    let Some(last) = levels.last() else {
        return Err(Error::arg("prediction has no levels"));
    };
    if (gt.height(), gt.width()) != (last.h, last.w) {
        return Err(Error::arg(format!(
            "ground truth {}x{} does not match prediction {}x{}",
            gt.height(),
            gt.width(),
            last.h,
            last.w
        )));
    }
    for (i, l) in levels.iter().enumerate() {
        if l.flow.len() != l.h * l.w * 2 || l.unc.as_ref().is_some_and(|u| u.len() != l.h * l.w) {
            return Err(Error::arg(format!("level {} buffer size mismatch", i + 1)));
        }
        if i > 0 && (l.h, l.w) != (2 * levels[i - 1].h, 2 * levels[i - 1].w) {
            return Err(Error::arg(format!("level {} dims inconsistent with level {i}", i + 1)));
        }
        let finite = l.flow.iter().chain(l.unc.iter().flatten()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::Numeric(format!("level {} holds non-finite values", i + 1)));
        }
    }
    let (first_supervised, use_unc, shift) = match cfg.mode {
        LossMode::L1 => (n_lv - 1, false, 0.0),
        LossMode::L1Shift50 => (n_lv - 1, false, OutputMode::Shift50.flow_offset() as f64),
        LossMode::Multiscale => (0, false, 0.0),
        LossMode::MultiscaleUncertainty => (0, true, 0.0),
    };
    if use_unc && levels.iter().any(|l| l.unc.is_none()) {
        return Err(Error::arg("multiscale_uncertainty loss needs uncertainty at every level"));
    }
    let n_sup = n_lv - first_supervised;
    if !cfg.level_weights.is_empty() && cfg.level_weights.len() != n_sup {
        return Err(Error::arg(format!(
            "{} level weights given for {n_sup} supervised levels",
            cfg.level_weights.len()
        )));
    }
    let weight = |i: usize| cfg.level_weights.get(i - first_supervised).copied().unwrap_or(1.0);

    // running estimates
    let mut acc_f: Vec<Vec<f64>> = Vec::with_capacity(n_lv);
    let mut acc_u: Vec<Option<Vec<f64>>> = Vec::with_capacity(n_lv);
    for (i, l) in levels.iter().enumerate() {
        if i == 0 {
            acc_f.push(l.flow.clone());
            acc_u.push(l.unc.clone());
        } else {
            let p = &levels[i - 1];
            let up = upsample(&acc_f[i - 1], p.h, p.w, l.h, l.w, true);
            acc_f.push(up.iter().zip(&l.flow).map(|(a, b)| a + b).collect());
            let u = match (&acc_u[i - 1], &l.unc) {
                (Some(pu), Some(du)) => {
                    let up = upsample(pu, p.h, p.w, l.h, l.w, false);
                    Some(up.iter().zip(du).map(|(a, b)| a + b).collect())
                }
                _ => None,
            };
            acc_u.push(u);
        }
    }

    let gt64: Vec<f64> = gt.data().iter().map(|&v| v as f64).collect();
    let mut value = 0.0;
    let mut signs = Vec::new();
    let mut g_f: Vec<Vec<f64>> = levels.iter().map(|l| vec![0.0; l.flow.len()]).collect();
    let mut g_u: Vec<Option<Vec<f64>>> = levels.iter().map(|l| l.unc.as_ref().map(|u| vec![0.0; u.len()])).collect();
    for i in first_supervised..n_lv {
        let l = &levels[i];
        let target = upsample(&gt64, last.h, last.w, l.h, l.w, true);
        let n = (l.h * l.w) as f64;
        let wl = weight(i);
        let mut sum = 0.0;
        for px in 0..l.h * l.w {
            let du = acc_f[i][2 * px] + shift - (target[2 * px] + shift);
            let dv = acc_f[i][2 * px + 1] + shift - (target[2 * px + 1] + shift);
            let r = du.abs() + dv.abs();
            signs.push(du.signum_or_zero() as i8);
            signs.push(dv.signum_or_zero() as i8);
            if use_unc {
                let y = acc_u[i].as_ref().expect("checked")[px];
                let sp_e = softplus(y + cfg.epsilon);
                sum += r / sp_e + softplus(y);
                if need_grad {
                    g_f[i][2 * px] += wl * du.signum_or_zero() / sp_e / n;
                    g_f[i][2 * px + 1] += wl * dv.signum_or_zero() / sp_e / n;
                    let gy = -r * sigmoid(y + cfg.epsilon) / (sp_e * sp_e) + sigmoid(y);
                    g_u[i].as_mut().expect("checked")[px] += wl * gy / n;
                }
            } else {
                sum += r;
                if need_grad {
                    g_f[i][2 * px] += wl * du.signum_or_zero() / n;
                    g_f[i][2 * px + 1] += wl * dv.signum_or_zero() / n;
                }
            }
        }
        value += wl * sum / n;
    }
    if !value.is_finite() {
        return Err(Error::Numeric(format!("loss evaluated to {value}")));
    }
    if need_grad {
        // fine to coarse: grad of a running estimate flows to its increment
        // and, through the upsampling, to the coarser estimate
        for i in (1..n_lv).rev() {
            let (p, l) = (&levels[i - 1], &levels[i]);
            let back = upsample_adjoint(&g_f[i], p.h, p.w, l.h, l.w, true);
            for (a, b) in g_f[i - 1].iter_mut().zip(back) {
                *a += b;
            }
            if let Some(gu) = g_u[i].clone() {
                let back = upsample_adjoint(&gu, p.h, p.w, l.h, l.w, false);
                if let Some(prev) = g_u[i - 1].as_mut() {
                    for (a, b) in prev.iter_mut().zip(back) {
                        *a += b;
                    }
                }
            }
        }
    }
    Ok(LossEval {
        value,
        flow_grads: g_f,
        unc_grads: g_u,
        signs,
    })
}

trait SignumOrZero {
    fn signum_or_zero(self) -> f64;
}

impl SignumOrZero for f64 {
    #[inline]
    fn signum_or_zero(self) -> f64 {
        if self > 0.0 {
            1.0
        } else if self < 0.0 {
            -1.0
        } else {
            0.0
        }
    }
}

/// Sum over levels of the mean per-pixel `|residual|₁ / softplus(Υ + ε) + softplus(Υ)`,
/// using the accumulated estimate at each level against the value-scaled,
/// resized ground truth.
pub fn multiscale_uncertainty_loss(pyramid: &PyramidOutput, gt: &FlowField, cfg: &LossConfig) -> Result<f64> {
    let cfg = LossConfig {
        mode: LossMode::MultiscaleUncertainty,
        ..cfg.clone()
    };
    Ok(evaluate(&Level64::from_pyramid(pyramid), gt, &cfg, false)?.value)
}

/// Loss selected by `cfg.mode`.
pub fn loss_variant(prediction: &PyramidOutput, gt: &FlowField, cfg: &LossConfig) -> Result<f64> {
    if cfg.mode == LossMode::L1Shift50 && prediction.mode != OutputMode::Shift50 {
        return Err(Error::arg(format!(
            "l1_shift50 loss needs a shift50 prediction, got {:?}",
            prediction.mode
        )));
    }
    Ok(evaluate(&Level64::from_pyramid(prediction), gt, cfg, false)?.value)
}
