use super::params::{Multiplier, QuantParams};
use crate::net::kernels::{im2col, ConvGeom};
use crate::net::Tensor;

/// Channels-first tensor of 8-bit codes sharing one set of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct QTensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub codes: Vec<u8>,
    pub params: QuantParams,
}

impl QTensor {
    pub fn dequantize(&self) -> Tensor {
        let data = self.codes.iter().map(|&q| self.params.dequantize(q) as f32).collect();
        Tensor::from_data(self.c, self.h, self.w, data)
    }

    fn centered(&self) -> Vec<i16> {
        let z = self.params.zero_point as i16;
        self.codes.iter().map(|&q| q as i16 - z).collect()
    }
}

#[inline]
fn requantize(acc: i32, m: Multiplier, out: QuantParams, floor: i64) -> u8 {
    (out.zero_point as i64 + m.apply(acc as i64)).clamp(floor, 255) as u8
}

fn floor_for(out: QuantParams, relu: bool) -> i64 {
    if relu {
        out.zero_point as i64
    } else {
        0
    }
}

/// Integer convolution: centred codes multiplied in i16, accumulated in i32,
/// rescaled to the output grid.
#[allow(clippy::too_many_arguments)]
pub fn conv(
    x: &QTensor,
    w_codes: &[u8],
    w_zero: i32,
    bias: &[i32],
    m: Multiplier,
    out: QuantParams,
    out_c: usize,
    g: ConvGeom,
    relu: bool,
) -> QTensor {
    let (oh, ow) = g.out_dims(x.h, x.w);
    let p = oh * ow;
    let kk = x.c * g.k * g.k;
    let col = im2col(&x.centered(), (x.c, x.h, x.w), g, 0i16);
    let floor = floor_for(out, relu);
    let mut codes = vec![0u8; out_c * p];
    let mut acc = vec![0i32; p];
    for oc in 0..out_c {
        acc.fill(bias[oc]);
        for k in 0..kk {
            let wv = w_codes[oc * kk + k] as i32 - w_zero;
            if wv == 0 {
                continue;
            }
            for (a, &v) in acc.iter_mut().zip(&col[k * p..(k + 1) * p]) {
                *a += wv * v as i32;
            }
        }
        for (q, &a) in codes[oc * p..(oc + 1) * p].iter_mut().zip(&acc) {
            *q = requantize(a, m, out, floor);
        }
    }
    QTensor {
        c: out_c,
        h: oh,
        w: ow,
        codes,
        params: out,
    }
}

/// Integer 2×2 stride-2 transposed convolution followed by ReLU.
pub fn tconv(x: &QTensor, w_codes: &[u8], w_zero: i32, bias: &[i32], m: Multiplier, out: QuantParams, out_c: usize) -> QTensor {
    let p = x.h * x.w;
    let oc4 = out_c * 4;
    let xs = x.centered();
    let mut y4 = vec![0i32; oc4 * p];
    for ic in 0..x.c {
        let src = &xs[ic * p..(ic + 1) * p];
        for o in 0..oc4 {
            let wv = w_codes[ic * oc4 + o] as i32 - w_zero;
            if wv == 0 {
                continue;
            }
            for (a, &v) in y4[o * p..(o + 1) * p].iter_mut().zip(src) {
                *a += wv * v as i32;
            }
        }
    }
    let (oh, ow) = (2 * x.h, 2 * x.w);
    let floor = floor_for(out, true);
    let mut codes = vec![0u8; out_c * oh * ow];
    for oc in 0..out_c {
        let dst = &mut codes[oc * oh * ow..(oc + 1) * oh * ow];
        for d in 0..4 {
            let (dy, dx) = (d / 2, d % 2);
            let src = &y4[(oc * 4 + d) * p..(oc * 4 + d + 1) * p];
            for y in 0..x.h {
                let orow = (2 * y + dy) * ow + dx;
                for xx in 0..x.w {
                    dst[orow + 2 * xx] = requantize(src[y * x.w + xx] + bias[oc], m, out, floor);
                }
            }
        }
    }
    QTensor {
        c: out_c,
        h: oh,
        w: ow,
        codes,
        params: out,
    }
}

/// `relu(a + b)` with each operand rescaled onto the output grid.
pub fn add_relu(a: &QTensor, b: &QTensor, ma: Multiplier, mb: Multiplier, out: QuantParams) -> QTensor {
    assert_eq!((a.c, a.h, a.w), (b.c, b.h, b.w), "add operand shapes");
    let (za, zb) = (a.params.zero_point as i64, b.params.zero_point as i64);
    let z = out.zero_point as i64;
    let codes = a
        .codes
        .iter()
        .zip(&b.codes)
        .map(|(&x, &y)| (z + ma.apply(x as i64 - za) + mb.apply(y as i64 - zb)).clamp(z, 255) as u8)
        .collect();
    QTensor {
        c: a.c,
        h: a.h,
        w: a.w,
        codes,
        params: out,
    }
}
