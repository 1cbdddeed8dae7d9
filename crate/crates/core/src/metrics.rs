//! End-point error, flow-magnitude masks, IoU and detection rate.

use serde::{Deserialize, Serialize};

use crate::datamodel::{FlowField, Mask};
use crate::error::{Error, Result};

/// Samples whose IoU exceeds this count as detections.
pub const DETECTION_IOU: f64 = 0.5;

fn same_dims(a: (usize, usize), b: (usize, usize), what: &str) -> Result<()> {
    if a != b {
        return Err(Error::arg(format!(
            "{what}: dims {}x{} and {}x{} differ",
            a.0, a.1, b.0, b.1
        )));
    }
    Ok(())
}

/// Mean Euclidean distance between predicted and reference vectors.
pub fn epe(pred: &FlowField, gt: &FlowField) -> Result<f64> {
    same_dims((pred.height(), pred.width()), (gt.height(), gt.width()), "epe")?;
    let sum: f64 = pred
        .data()
        .chunks_exact(2)
        .zip(gt.data().chunks_exact(2))
        .map(|(p, g)| {
            let du = (p[0] - g[0]) as f64;
            let dv = (p[1] - g[1]) as f64;
            (du * du + dv * dv).sqrt()
        })
        .sum();
    Ok(sum / (pred.height() * pred.width()) as f64)
}

/// Pixels whose flow magnitude is strictly above `threshold`.
pub fn flow_magnitude_mask(flow: &FlowField, threshold: f32) -> Mask {
    let data = flow.magnitudes().into_iter().map(|m| m > threshold).collect();
    Mask::new(flow.height(), flow.width(), data).expect("dims from flow")
}

/// Intersection over union; two empty masks count as a perfect match.
pub fn iou(a: &Mask, b: &Mask) -> Result<f64> {
    same_dims((a.height(), a.width()), (b.height(), b.width()), "iou")?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Fraction of samples with IoU strictly above `threshold`.
pub fn detection_rate_at(ious: &[f64], threshold: f64) -> f64 {
    if ious.is_empty() {
        return 0.0;
    }
    ious.iter().filter(|&&v| v > threshold).count() as f64 / ious.len() as f64
}

pub fn detection_rate(ious: &[f64]) -> f64 {
    detection_rate_at(ious, DETECTION_IOU)
}

fn percentile(mut v: Vec<f32>, q: f64) -> f32 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f32::total_cmp);
    let k = ((v.len() - 1) as f64 * q).round() as usize;
    v[k]
}

/// Obstacle threshold halfway between background motion (its 95th percentile
/// magnitude) and the mean foreground speed.
pub fn default_obstacle_threshold(gt: &FlowField, foreground: &Mask) -> Result<f32> {
    same_dims((gt.height(), gt.width()), (foreground.height(), foreground.width()), "threshold")?;
    let mags = gt.magnitudes();
    let (mut bg, mut fg) = (Vec::new(), Vec::new());
    for (&m, &f) in mags.iter().zip(foreground.data()) {
        if f {
            fg.push(m);
        } else {
            bg.push(m);
        }
    }
    let fg_speed = if fg.is_empty() { 0.0 } else { fg.iter().sum::<f32>() / fg.len() as f32 };
    Ok(0.5 * (percentile(bg, 0.95) + fg_speed))
}

/// One evaluated sample: predicted flow, reference flow and, for obstacle
/// scenes, the reference mask.
pub struct EvalItem<'a> {
    pub pred: &'a FlowField,
    pub gt: &'a FlowField,
    pub gt_mask: Option<&'a Mask>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_epe: f64,
    pub per_sample_epe: Vec<f64>,
    /// `None` when no sample carried an obstacle mask.
    pub detection_rate: Option<f64>,
    pub ious: Vec<f64>,
    pub config: serde_json::Value,
}

impl EvalReport {
    /// Mask threshold `None` selects [`default_obstacle_threshold`] per sample.
    pub fn compute(items: &[EvalItem], mask_threshold: Option<f32>, config: serde_json::Value) -> Result<Self> {
        let mut per_sample_epe = Vec::with_capacity(items.len());
        let mut ious = Vec::new();
        for it in items {
            per_sample_epe.push(epe(it.pred, it.gt)?);
            if let Some(m) = it.gt_mask {
                let thr = match mask_threshold {
                    Some(t) => t,
                    None => default_obstacle_threshold(it.gt, m)?,
                };
                ious.push(iou(&flow_magnitude_mask(it.pred, thr), m)?);
            }
        }
        let mean_epe = per_sample_epe.iter().sum::<f64>() / per_sample_epe.len().max(1) as f64;
        Ok(EvalReport {
            mean_epe,
            detection_rate: (!ious.is_empty()).then(|| detection_rate(&ious)),
            per_sample_epe,
            ious,
            config,
        })
    }

    /// One JSON record per sample followed by a summary record.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (i, e) in self.per_sample_epe.iter().enumerate() {
            let rec = serde_json::json!({ "sample": i, "epe": e, "iou": self.ious.get(i) });
            out.push_str(&rec.to_string());
            out.push('\n');
        }
        let summary = serde_json::json!({
            "mean_epe": self.mean_epe,
            "detection_rate": self.detection_rate,
            "samples": self.per_sample_epe.len(),
            "config": self.config,
        });
        out.push_str(&summary.to_string());
        out.push('\n');
        out
    }

    pub fn summary_table(&self) -> String {
        let dr = self.detection_rate.map_or("-".to_string(), |d| format!("{d:.3}"));
        format!(
            "{:<10} {:>10} {:>8}\n{:<10} {:>10.4} {:>8}\n",
            "samples",
            "mean EPE",
            "DR",
            self.per_sample_epe.len(),
            self.mean_epe,
            dr
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn square(h: usize, w: usize, y0: usize, x0: usize, s: usize) -> Mask {
        Mask::from_fn(h, w, |y, x| y >= y0 && y < y0 + s && x >= x0 && x < x0 + s)
    }

    #[test]
    fn epe_basics() {
        let gt = FlowField::constant(5, 7, 1.0, -2.0);
        assert_eq!(epe(&gt, &gt).unwrap(), 0.0);
        assert!((epe(&gt.offset(3.0, 4.0), &gt).unwrap() - 5.0).abs() < 1e-12);
        assert!(epe(&gt, &FlowField::zeros(5, 6)).unwrap_err().is_argument());
    }

    #[test]
    fn masks() {
        assert_eq!(flow_magnitude_mask(&FlowField::zeros(4, 4), 1.0).count(), 0);
        assert_eq!(flow_magnitude_mask(&FlowField::constant(4, 4, 0.1, 0.0), 0.0).count(), 16);
        let disc = Mask::from_fn(20, 20, |y, x| (y as f32 - 10.0).powi(2) + (x as f32 - 9.0).powi(2) <= 25.0);
        let mut f = FlowField::zeros(20, 20);
        for y in 0..20 {
            for x in 0..20 {
                if disc.get(y, x) {
                    f.set(y, x, 4.0, 0.0);
                }
            }
        }
        assert_eq!(flow_magnitude_mask(&f, 2.0), disc);
    }

    #[test]
    fn iou_cases() {
        let a = square(10, 10, 0, 0, 4);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &square(10, 10, 5, 5, 4)).unwrap(), 0.0);
        assert!((iou(&a, &square(10, 10, 0, 2, 4)).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(iou(&Mask::empty(3, 3), &Mask::empty(3, 3)).unwrap(), 1.0);
        assert!(iou(&a, &Mask::empty(3, 3)).is_err());
    }

    #[test]
    fn detection_rate_threshold() {
        let ious = [0.2, 0.5, 0.51, 0.9];
        assert_eq!(detection_rate(&ious), 0.5);
        let mut prev = 1.0;
        for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let d = detection_rate_at(&ious, t);
            assert!(d <= prev);
            prev = d;
        }
    }

    #[test]
    fn default_threshold_sits_between_background_and_object() {
        let m = square(16, 16, 4, 4, 6);
        let mut f = FlowField::constant(16, 16, 0.5, 0.0);
        for y in 4..10 {
            for x in 4..10 {
                f.set(y, x, 6.0, 0.0);
            }
        }
        let t = default_obstacle_threshold(&f, &m).unwrap();
        assert!((t - 3.25).abs() < 1e-6);
        let r = EvalReport::compute(
            &[EvalItem { pred: &f, gt: &f, gt_mask: Some(&m) }],
            None,
            serde_json::Value::Null,
        )
        .unwrap();
        assert_eq!(r.detection_rate, Some(1.0));
        assert_eq!(r.to_jsonl().lines().count(), 2);
    }

    fn field(v: Vec<f32>) -> FlowField {
        FlowField::new(3, 4, v).unwrap()
    }

    proptest! {
        #[test]
        fn epe_triangle(a in proptest::collection::vec(-10f32..10.0, 24),
                        b in proptest::collection::vec(-10f32..10.0, 24),
                        c in proptest::collection::vec(-10f32..10.0, 24)) {
            let (a, b, c) = (field(a), field(b), field(c));
            let lhs = epe(&a, &c).unwrap();
            let rhs = epe(&a, &b).unwrap() + epe(&b, &c).unwrap();
            prop_assert!(lhs <= rhs + 1e-9);
        }

        #[test]
        fn iou_symmetric_in_range(a in proptest::collection::vec(any::<bool>(), 20),
                                  b in proptest::collection::vec(any::<bool>(), 20)) {
            let a = Mask::new(4, 5, a).unwrap();
            let b = Mask::new(4, 5, b).unwrap();
            let x = iou(&a, &b).unwrap();
            prop_assert_eq!(x, iou(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&x));
        }
    }
}
