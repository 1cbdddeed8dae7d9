//! Float convolution kernels (im2col + SGEMM) and their gradients.

use super::tensor::Tensor;

/// `c = alpha * a · b + beta * c` over row/column strided matrices.
#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
    rsc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    debug_assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    debug_assert!((m - 1) * rsc + n - 1 < c.len());
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfold `x` into a `(C·k·k) × (OH·OW)` matrix; out-of-image taps read `fill`.
pub fn im2col<T: Copy>(
    x: &[T],
    (c, h, w): (usize, usize, usize),
    g: ConvGeom,
    fill: T,
) -> Vec<T> {
    let (oh, ow) = g.out_dims(h, w);
    let p = oh * ow;
    let mut col = vec![fill; c * g.k * g.k * p];
    for ch in 0..c {
        let src = &x[ch * h * w..(ch + 1) * h * w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ch * g.k + ky) * g.k + kx;
                let dst = &mut col[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let srow = &src[iy as usize * w..(iy as usize + 1) * w];
                    let drow = &mut dst[oy * ow..(oy + 1) * ow];
                    if g.stride == 1 {
                        // Contiguous run: ix = ox + kx - pad.
                        let lo = g.pad.saturating_sub(kx);
                        let hi = (w + g.pad - kx).min(ow);
                        if lo < hi {
                            let s0 = lo + kx - g.pad;
                            drow[lo..hi].copy_from_slice(&srow[s0..s0 + (hi - lo)]);
                        }
                    } else {
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                *d = srow[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

/// Fold a column-gradient back onto the input grid (adjoint of [`im2col`]).
fn col2im_add(col: &[f32], dx: &mut [f32], (c, h, w): (usize, usize, usize), g: ConvGeom) {
    let (oh, ow) = g.out_dims(h, w);
    let p = oh * ow;
    for ch in 0..c {
        let dst = &mut dx[ch * h * w..(ch + 1) * h * w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ch * g.k + ky) * g.k + kx;
                let src = &col[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let drow = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                    let srow = &src[oy * ow..(oy + 1) * ow];
                    for (ox, &v) in srow.iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            drow[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Convolution with weights laid out `[out][in][ky][kx]`.
pub fn conv_forward(
    x: &Tensor,
    weight: &[f32],
    bias: &[f32],
    out_c: usize,
    g: ConvGeom,
    relu: bool,
) -> Tensor {
    let (oh, ow) = g.out_dims(x.h, x.w);
    let p = oh * ow;
    let kdim = x.c * g.k * g.k;
    debug_assert_eq!(weight.len(), out_c * kdim);
    let mut out = vec![0.0f32; out_c * p];
    for (oc, row) in out.chunks_exact_mut(p).enumerate() {
        row.fill(bias[oc]);
    }
    let owned;
    let col: &[f32] = if g.is_pointwise() {
        &x.data
    } else {
        owned = im2col(&x.data, x.shape(), g, 0.0);
        &owned
    };
    gemm(out_c, kdim, p, weight, (kdim, 1), col, (p, 1), 1.0, &mut out, p);
    if relu {
        for v in &mut out {
            *v = v.max(0.0);
        }
    }
    Tensor::from_data(out_c, oh, ow, out)
}

/// Accumulate weight/bias gradients and optionally the input gradient.
/// `dz` is the gradient at the pre-activation output.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward(
    x: &Tensor,
    weight: &[f32],
    out_c: usize,
    g: ConvGeom,
    dz: &Tensor,
    dweight: &mut [f32],
    dbias: &mut [f32],
    dx: Option<&mut Tensor>,
) {
    let p = dz.plane();
    let kdim = x.c * g.k * g.k;
    for (oc, row) in dz.data.chunks_exact(p).enumerate() {
        dbias[oc] += row.iter().sum::<f32>();
    }
    let owned;
    let col: &[f32] = if g.is_pointwise() {
        &x.data
    } else {
        owned = im2col(&x.data, x.shape(), g, 0.0);
        &owned
    };
    // dW[oc, K] += dz[oc, P] · col[K, P]^T
    gemm(out_c, p, kdim, &dz.data, (p, 1), col, (1, p), 1.0, dweight, kdim);
    if let Some(dx) = dx {
        if g.is_pointwise() {
            // dx[ic, P] += W^T[ic, oc] · dz[oc, P]
            gemm(x.c, out_c, p, weight, (1, kdim), &dz.data, (p, 1), 1.0, &mut dx.data, p);
        } else {
            let mut dcol = vec![0.0f32; kdim * p];
            gemm(kdim, out_c, p, weight, (1, kdim), &dz.data, (p, 1), 0.0, &mut dcol, p);
            col2im_add(&dcol, &mut dx.data, x.shape(), g);
        }
    }
}

/// 2×2 stride-2 transposed convolution, weights laid out `[in][out][dy][dx]`.
pub fn tconv_forward(x: &Tensor, weight: &[f32], bias: &[f32], out_c: usize, relu: bool) -> Tensor {
    let p = x.plane();
    let oc4 = out_c * 4;
    debug_assert_eq!(weight.len(), x.c * oc4);
    let mut y4 = vec![0.0f32; oc4 * p];
    // y4[oc4, P] = Wt^T[oc4, ic] · x[ic, P]
    gemm(oc4, x.c, p, weight, (1, oc4), &x.data, (p, 1), 0.0, &mut y4, p);
    let (oh, ow) = (2 * x.h, 2 * x.w);
    let mut out = vec![0.0f32; out_c * oh * ow];
    for oc in 0..out_c {
        for d in 0..4 {
            let (dy, dxx) = (d / 2, d % 2);
            let src = &y4[(oc * 4 + d) * p..(oc * 4 + d + 1) * p];
            let dst = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
            for y in 0..x.h {
                let orow = (2 * y + dy) * ow + dxx;
                for xx in 0..x.w {
                    dst[orow + 2 * xx] = src[y * x.w + xx] + bias[oc];
                }
            }
        }
    }
    if relu {
        for v in &mut out {
            *v = v.max(0.0);
        }
    }
    Tensor::from_data(out_c, oh, ow, out)
}

#[allow(clippy::too_many_arguments)]
pub fn tconv_backward(
    x: &Tensor,
    weight: &[f32],
    out_c: usize,
    dz: &Tensor,
    dweight: &mut [f32],
    dbias: &mut [f32],
    dx: Option<&mut Tensor>,
) {
    let p = x.plane();
    let oc4 = out_c * 4;
    let ow = dz.w;
    let mut dy4 = vec![0.0f32; oc4 * p];
    for oc in 0..out_c {
        let src = &dz.data[oc * dz.plane()..(oc + 1) * dz.plane()];
        dbias[oc] += src.iter().sum::<f32>();
        for d in 0..4 {
            let (dy, dxx) = (d / 2, d % 2);
            let dst = &mut dy4[(oc * 4 + d) * p..(oc * 4 + d + 1) * p];
            for y in 0..x.h {
                let orow = (2 * y + dy) * ow + dxx;
                for xx in 0..x.w {
                    dst[y * x.w + xx] = src[orow + 2 * xx];
                }
            }
        }
    }
    // dWt[ic, oc4] += x[ic, P] · dy4[oc4, P]^T
    gemm(x.c, p, oc4, &x.data, (p, 1), &dy4, (1, p), 1.0, dweight, oc4);
    if let Some(dx) = dx {
        gemm(x.c, oc4, p, weight, (oc4, 1), &dy4, (p, 1), 1.0, &mut dx.data, p);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Direct nested-loop convolution.
    fn conv_naive(x: &Tensor, w: &[f32], b: &[f32], oc: usize, g: ConvGeom) -> Tensor {
        let (oh, ow) = g.out_dims(x.h, x.w);
        let mut out = Tensor::zeros(oc, oh, ow);
        for o in 0..oc {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[o] as f64;
                    for ic in 0..x.c {
                        for ky in 0..g.k {
                            for kx in 0..g.k {
                                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize {
                                    continue;
                                }
                                let xv = x.data[(ic * x.h + iy as usize) * x.w + ix as usize];
                                let wv = w[((o * x.c + ic) * g.k + ky) * g.k + kx];
                                acc += (xv * wv) as f64;
                            }
                        }
                    }
                    out.data[(o * oh + oy) * ow + ox] = acc as f32;
                }
            }
        }
        out
    }

    #[test]
    fn single_conv_flop_example_shape() {
        // 3x3, 1->1, 8x8, stride 1, same padding
        let g = ConvGeom { k: 3, stride: 1, pad: 1 };
        assert_eq!(g.out_dims(8, 8), (8, 8));
    }

    #[test]
    fn conv_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(k, stride, pad) in &[(3, 1, 1), (3, 2, 1), (1, 1, 0)] {
            let g = ConvGeom { k, stride, pad };
            let x = Tensor::from_data(3, 8, 10, rand_vec(&mut rng, 240));
            let w = rand_vec(&mut rng, 4 * 3 * k * k);
            let b = rand_vec(&mut rng, 4);
            let fast = conv_forward(&x, &w, &b, 4, g, false);
            let slow = conv_naive(&x, &w, &b, 4, g);
            for (a, e) in fast.data.iter().zip(&slow.data) {
                assert!((a - e).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = ConvGeom { k: 3, stride: 2, pad: 1 };
        let x = Tensor::from_data(2, 6, 6, rand_vec(&mut rng, 72));
        let w = rand_vec(&mut rng, 3 * 2 * 9);
        let b = rand_vec(&mut rng, 3);
        let (oh, ow) = g.out_dims(6, 6);
        let r = rand_vec(&mut rng, 3 * oh * ow);
        // objective: <r, conv(x)>
        let obj = |x: &Tensor, w: &[f32]| -> f64 {
            conv_naive(x, w, &b, 3, g)
                .data
                .iter()
                .zip(&r)
                .map(|(a, b)| (*a as f64) * (*b as f64))
                .sum()
        };
        let dz = Tensor::from_data(3, oh, ow, r.clone());
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; 3];
        let mut dx = Tensor::zeros(2, 6, 6);
        conv_backward(&x, &w, 3, g, &dz, &mut dw, &mut db, Some(&mut dx));
        let h = 1e-2f32;
        for i in [0, 5, 17, 40, 53] {
            let mut wp = w.clone();
            wp[i] += h;
            let mut wm = w.clone();
            wm[i] -= h;
            let fd = (obj(&x, &wp) - obj(&x, &wm)) / (2.0 * h as f64);
            assert!((fd - dw[i] as f64).abs() < 1e-3, "dw[{i}] {fd} vs {}", dw[i]);
        }
        for i in [0, 7, 35, 71] {
            let mut xp = x.clone();
            xp.data[i] += h;
            let mut xm = x.clone();
            xm.data[i] -= h;
            let fd = (obj(&xp, &w) - obj(&xm, &w)) / (2.0 * h as f64);
            assert!((fd - dx.data[i] as f64).abs() < 1e-3);
        }
        assert!((db[1] as f64 - r[oh * ow..2 * oh * ow].iter().map(|&v| v as f64).sum::<f64>()).abs() < 1e-4);
    }

    #[test]
    fn tconv_matches_definition_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::from_data(3, 4, 5, rand_vec(&mut rng, 60));
        let w = rand_vec(&mut rng, 3 * 2 * 4);
        let b = rand_vec(&mut rng, 2);
        let y = tconv_forward(&x, &w, &b, 2, false);
        assert_eq!(y.shape(), (2, 8, 10));
        for oc in 0..2 {
            for oy in 0..8 {
                for ox in 0..10 {
                    let (iy, ix, d) = (oy / 2, ox / 2, (oy % 2) * 2 + ox % 2);
                    let mut acc = b[oc];
                    for ic in 0..3 {
                        acc += x.data[(ic * 4 + iy) * 5 + ix] * w[(ic * 2 + oc) * 4 + d];
                    }
                    assert!((y.data[(oc * 8 + oy) * 10 + ox] - acc).abs() < 1e-5);
                }
            }
        }
        let r = rand_vec(&mut rng, y.data.len());
        let dz = Tensor::from_data(2, 8, 10, r.clone());
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; 2];
        let mut dx = Tensor::zeros(3, 4, 5);
        tconv_backward(&x, &w, 2, &dz, &mut dw, &mut db, Some(&mut dx));
        let obj = |x: &Tensor, w: &[f32]| -> f64 {
            tconv_forward(x, w, &b, 2, false)
                .data
                .iter()
                .zip(&r)
                .map(|(a, b)| (*a as f64) * (*b as f64))
                .sum()
        };
        let h = 1e-2;
        for i in [0, 9, 23] {
            let mut wp = w.clone();
            wp[i] += h;
            let mut wm = w.clone();
            wm[i] -= h;
            let fd = (obj(&x, &wp) - obj(&x, &wm)) / (2.0 * h as f64);
            assert!((fd - dw[i] as f64).abs() < 1e-3);
        }
        for i in [0, 31, 59] {
            let mut xp = x.clone();
            xp.data[i] += h;
            let mut xm = x.clone();
            xm.data[i] -= h;
            let fd = (obj(&xp, &w) - obj(&xm, &w)) / (2.0 * h as f64);
            assert!((fd - dx.data[i] as f64).abs() < 1e-3);
        }
    }
}
