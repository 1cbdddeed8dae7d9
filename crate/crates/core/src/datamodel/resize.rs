//! Corner-aligned bilinear resampling.
//!
//! Output pixel `i` along an axis samples input coordinate
//! `i * (in - 1) / (out - 1)` (0 when `out == 1`), so the first and last
//! samples land exactly on the input corners. The same convention is used for
//! pyramid accumulation and for downsizing ground truth in the loss.

use num_traits::Float;

use super::{FlowField, Image, UncertaintyField};
use crate::error::{Error, Result};

/// Source index pair and weight of the second sample for each output index.
fn axis_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    (0..n_out)
        .map(|i| {
            let pos = if n_out == 1 || n_in == 1 {
                0.0
            } else {
                i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
            };
            let i0 = (pos.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

/// Resize an interleaved `h × w × c` buffer to `out_h × out_w × c`.
pub fn resize_interleaved<T: Float>(
    src: &[T],
    h: usize,
    w: usize,
    c: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<T> {
    debug_assert_eq!(src.len(), h * w * c);
    if h == out_h && w == out_w {
        return src.to_vec();
    }
    let ty = axis_taps(h, out_h);
    let tx = axis_taps(w, out_w);
    let mut out = vec![T::zero(); out_h * out_w * c];
    for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
        let fy = T::from(fy).unwrap();
        let gy = T::one() - fy;
        for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
            let fx = T::from(fx).unwrap();
            let gx = T::one() - fx;
            let o = (oy * out_w + ox) * c;
            for ch in 0..c {
                let a = src[(y0 * w + x0) * c + ch];
                let b = src[(y0 * w + x1) * c + ch];
                let d = src[(y1 * w + x0) * c + ch];
                let e = src[(y1 * w + x1) * c + ch];
                out[o + ch] = gy * (gx * a + fx * b) + fy * (gx * d + fx * e);
            }
        }
    }
    out
}

/// Adjoint of [`resize_interleaved`]: maps a gradient on the resized grid back
/// to the source grid.
pub fn resize_interleaved_adjoint<T: Float>(
    grad_out: &[T],
    h: usize,
    w: usize,
    c: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<T> {
    debug_assert_eq!(grad_out.len(), out_h * out_w * c);
    if h == out_h && w == out_w {
        return grad_out.to_vec();
    }
    let ty = axis_taps(h, out_h);
    let tx = axis_taps(w, out_w);
    let mut g = vec![T::zero(); h * w * c];
    for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
        let fy = T::from(fy).unwrap();
        let gy = T::one() - fy;
        for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
            let fx = T::from(fx).unwrap();
            let gx = T::one() - fx;
            let o = (oy * out_w + ox) * c;
            for ch in 0..c {
                let go = grad_out[o + ch];
                g[(y0 * w + x0) * c + ch] = g[(y0 * w + x0) * c + ch] + gy * gx * go;
                g[(y0 * w + x1) * c + ch] = g[(y0 * w + x1) * c + ch] + gy * fx * go;
                g[(y1 * w + x0) * c + ch] = g[(y1 * w + x0) * c + ch] + fy * gx * go;
                g[(y1 * w + x1) * c + ch] = g[(y1 * w + x1) * c + ch] + fy * fx * go;
            }
        }
    }
    g
}

/// Grid-shaped values that can be bilinearly resized.
pub trait GridField: Sized {
    fn grid_dims(&self) -> (usize, usize, usize);
    fn grid_values(&self) -> &[f32];
    fn from_grid(h: usize, w: usize, values: Vec<f32>) -> Result<Self>;
    /// Whether channel 0/1 hold horizontal/vertical displacements that must
    /// rescale with the grid.
    fn is_flow() -> bool {
        false
    }
}

impl GridField for FlowField {
    fn grid_dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, 2)
    }
    fn grid_values(&self) -> &[f32] {
        &self.data
    }
    fn from_grid(h: usize, w: usize, values: Vec<f32>) -> Result<Self> {
        FlowField::new(h, w, values)
    }
    fn is_flow() -> bool {
        true
    }
}

impl GridField for UncertaintyField {
    fn grid_dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, 1)
    }
    fn grid_values(&self) -> &[f32] {
        &self.data
    }
    fn from_grid(h: usize, w: usize, values: Vec<f32>) -> Result<Self> {
        UncertaintyField::new(h, w, values)
    }
}

impl GridField for Image {
    fn grid_dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }
    fn grid_values(&self) -> &[f32] {
        &self.data
    }
    fn from_grid(h: usize, w: usize, values: Vec<f32>) -> Result<Self> {
        let c = values.len() / (h * w).max(1);
        Image::new(h, w, c, values)
    }
}

/// Bilinear resize with corner-aligned sampling.
///
/// When `scale_flow_values` is set and the field is a [`FlowField`], `u` is
/// multiplied by `out_w / in_w` and `v` by `out_h / in_h`. The flag has no
/// effect on other field kinds.
pub fn resize_bilinear<F: GridField>(
    field: &F,
    out_h: usize,
    out_w: usize,
    scale_flow_values: bool,
) -> Result<F> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::arg(format!(
            "resize target must be positive, got {out_h}x{out_w}"
        )));
    }
    let (h, w, c) = field.grid_dims();
    let mut out = resize_interleaved(field.grid_values(), h, w, c, out_h, out_w);
    if scale_flow_values && F::is_flow() {
        scale_flow_in_place(&mut out, h, w, out_h, out_w);
    }
    F::from_grid(out_h, out_w, out)
}

pub(crate) fn scale_flow_in_place<T: Float>(
    data: &mut [T],
    h: usize,
    w: usize,
    out_h: usize,
    out_w: usize,
) {
    let sx = T::from(out_w as f64 / w as f64).unwrap();
    let sy = T::from(out_h as f64 / h as f64).unwrap();
    if sx == T::one() && sy == T::one() {
        return;
    }
    for p in data.chunks_exact_mut(2) {
        p[0] = p[0] * sx;
        p[1] = p[1] * sy;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_flow(seed: u64, h: usize, w: usize) -> FlowField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..h * w * 2).map(|_| rng.random_range(-5.0..5.0)).collect();
        FlowField::new(h, w, data).unwrap()
    }

    /// Direct four-neighbor weighted sum, written independently of the
    /// tap tables above.
    fn oracle(src: &FlowField, oh: usize, ow: usize) -> Vec<f64> {
        let (h, w) = (src.height(), src.width());
        let mut out = Vec::new();
        for oy in 0..oh {
            for ox in 0..ow {
                let sy = oy as f64 * (h as f64 - 1.0) / (oh as f64 - 1.0);
                let sx = ox as f64 * (w as f64 - 1.0) / (ow as f64 - 1.0);
                for ch in 0..2 {
                    let mut acc = 0.0;
                    for yy in 0..h {
                        for xx in 0..w {
                            let wy = (1.0 - (sy - yy as f64).abs()).max(0.0);
                            let wx = (1.0 - (sx - xx as f64).abs()).max(0.0);
                            let (u, v) = src.get(yy, xx);
                            let val = if ch == 0 { u } else { v } as f64;
                            acc += wy * wx * val;
                        }
                    }
                    out.push(acc);
                }
            }
        }
        out
    }

    #[test]
    fn identity_resize_is_noop() {
        let f = random_flow(1, 8, 8);
        assert_eq!(resize_bilinear(&f, 8, 8, true).unwrap(), f);
    }

    #[test]
    fn constant_upscale_with_value_scaling() {
        let f = FlowField::constant(8, 8, 2.0, 0.0);
        let r = resize_bilinear(&f, 16, 16, true).unwrap();
        for p in r.data().chunks_exact(2) {
            assert_eq!(p, &[4.0, 0.0]);
        }
    }

    #[test]
    fn upscale_matches_neighbor_oracle() {
        let f = random_flow(7, 8, 8);
        let r = resize_bilinear(&f, 16, 16, false).unwrap();
        let o = oracle(&f, 16, 16);
        for (a, b) in r.data().iter().zip(&o) {
            assert!((*a as f64 - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_target_rejected() {
        let f = FlowField::zeros(8, 8);
        assert!(matches!(resize_bilinear(&f, 0, 4, false), Err(Error::Argument(_))));
    }

    #[test]
    fn adjoint_identity() {
        // <R x, y> == <x, R^T y>
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..6 * 10 * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..11 * 7 * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rx = resize_interleaved(&x, 6, 10, 2, 11, 7);
        let rty = resize_interleaved_adjoint(&y, 6, 10, 2, 11, 7);
        let lhs: f64 = rx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&rty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn resize_is_linear(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0,
                            oh in 1usize..20, ow in 1usize..20) {
            let f: Vec<f64> = random_flow(seed, 9, 7).data().iter().map(|&v| v as f64).collect();
            let g: Vec<f64> = random_flow(seed + 1, 9, 7).data().iter().map(|&v| v as f64).collect();
            let combo: Vec<f64> = f.iter().zip(&g).map(|(x, y)| a * x + b * y).collect();
            let run = |src: &[f64]| {
                let mut out = resize_interleaved(src, 9, 7, 2, oh, ow);
                scale_flow_in_place(&mut out, 9, 7, oh, ow);
                out
            };
            let lhs = run(&combo);
            let (rf, rg) = (run(&f), run(&g));
            for ((l, x), y) in lhs.iter().zip(&rf).zip(&rg) {
                prop_assert!((l - (a * x + b * y)).abs() < 1e-6);
            }
        }

        #[test]
        fn constant_is_preserved(c in -10.0f32..10.0, oh in 1usize..30, ow in 1usize..30) {
            let u = UncertaintyField::constant(8, 12, c);
            let r = resize_bilinear(&u, oh, ow, true).unwrap();
            for v in r.data() {
                prop_assert!((v - c).abs() <= 1e-5 * (1.0 + c.abs()));
            }
        }
    }
}
