//! Central-difference verification of analytic loss gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::{evaluate, Level64, LossConfig};
use crate::datamodel::FlowField;
use crate::error::Result;
use crate::net::PyramidOutput;

pub const FD_STEP: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinates compared.
    pub checked: usize,
    /// Coordinates skipped because a step of ±`FD_STEP` crosses an L1 kink.
    pub excluded: Vec<usize>,
}

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compare `analytic` with central differences of `f` at `x`, skipping `excluded`.
pub fn check_gradient(f: impl Fn(&[f64]) -> f64, analytic: &[f64], x: &[f64], step: f64, excluded: &[usize]) -> GradCheckReport {
    let mut max_rel_error: f64 = 0.0;
    let mut checked = 0;
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        if excluded.contains(&i) {
            continue;
        }
        xp[i] = x[i] + step;
        let fp = f(&xp);
        xp[i] = x[i] - step;
        let fm = f(&xp);
        xp[i] = x[i];
        let fd = (fp - fm) / (2.0 * step);
        max_rel_error = max_rel_error.max(relative_error(analytic[i], fd));
        checked += 1;
    }
    GradCheckReport {
        max_rel_error,
        checked,
        excluded: excluded.to_vec(),
    }
}

fn flatten(levels: &[Level64]) -> Vec<f64> {
    let mut x = Vec::new();
    for l in levels {
        x.extend_from_slice(&l.flow);
    }
    for l in levels {
        if let Some(u) = &l.unc {
            x.extend_from_slice(u);
        }
    }
    x
}

fn unflatten(template: &[Level64], x: &[f64]) -> Vec<Level64> {
    let mut out = template.to_vec();
    let mut k = 0;
    for l in &mut out {
        let n = l.flow.len();
        l.flow.copy_from_slice(&x[k..k + n]);
        k += n;
    }
    for l in &mut out {
        if let Some(u) = &mut l.unc {
            let n = u.len();
            u.copy_from_slice(&x[k..k + n]);
            k += n;
        }
    }
    out
}

fn check_levels(levels: &[Level64], gt: &FlowField, cfg: &LossConfig) -> Result<GradCheckReport> {
    let eval = evaluate(levels, gt, cfg, true)?;
    let mut analytic = Vec::new();
    for g in &eval.flow_grads {
        analytic.extend_from_slice(g);
    }
    for g in eval.unc_grads.iter().flatten() {
        analytic.extend_from_slice(g);
    }
    let x = flatten(levels);
    let signs_at = |x: &[f64]| {
        evaluate(&unflatten(levels, x), gt, cfg, false)
            .map(|e| e.signs)
            .unwrap_or_default()
    };
    let mut excluded = Vec::new();
    let mut xp = x.clone();
    for i in 0..x.len() {
        xp[i] = x[i] + FD_STEP;
        let sp = signs_at(&xp);
        xp[i] = x[i] - FD_STEP;
        let sm = signs_at(&xp);
        xp[i] = x[i];
        if sp != sm {
            excluded.push(i);
        }
    }
    let f = |x: &[f64]| {
        evaluate(&unflatten(levels, x), gt, cfg, false)
            .map(|e| e.value)
            .unwrap_or(f64::NAN)
    };
    Ok(check_gradient(f, &analytic, &x, FD_STEP, &excluded))
}

/// Gradient check of the configured loss at a given prediction, with respect
/// to every flow and uncertainty increment.
pub fn grad_check_at(pyramid: &PyramidOutput, gt: &FlowField, cfg: &LossConfig) -> Result<GradCheckReport> {
    check_levels(&Level64::from_pyramid(pyramid), gt, cfg)
}

/// Gradient check at a random seeded point of a two-level instance whose
/// finest level is 4×4.
pub fn grad_check(cfg: &LossConfig, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let levels: Vec<Level64> = [(2, 2), (4, 4)]
        .iter()
        .map(|&(h, w)| Level64 {
            h,
            w,
            flow: (0..h * w * 2).map(|_| rng.random_range(-2.0..2.0)).collect(),
            unc: Some((0..h * w).map(|_| rng.random_range(-1.5..1.5)).collect()),
        })
        .collect();
    let gt = FlowField::new(4, 4, (0..32).map(|_| rng.random_range(-3.0..3.0)).collect())?;
    check_levels(&levels, &gt, cfg)
}
