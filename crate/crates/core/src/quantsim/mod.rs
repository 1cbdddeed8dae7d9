//! Emulated unsigned 8-bit inference: per-tensor affine quantization, range
//! calibration and an integer-only forward pass. Pyramid accumulation
//! (the resizes between levels) stays in real arithmetic.

mod kernels;
mod params;

pub use params::{Multiplier, QuantParams, DEGENERATE_WIDEN};

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datamodel::ImagePair;
use crate::error::{Error, Result};
use crate::net::graph::{self, conv_f32, tconv_f32, Backend, Heads};
use crate::net::{
    pair_tensor, pyramid_from_heads, read_archive, write_archive, Architecture, ConvSpec, NetConfig, PyramidOutput,
    TConvSpec, Tensor, Weights,
};
use kernels::QTensor;

/// Quantization of the stacked input frames, whose values lie in `[0, 1]`.
pub const INPUT_PARAMS: QuantParams = QuantParams {
    scale: 1.0 / 255.0,
    zero_point: 0,
};

/// Codes of one weight array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub params: QuantParams,
    #[serde(skip)]
    pub codes: Vec<u8>,
}

/// One compiled layer, in graph execution order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum QOp {
    Conv {
        weight: usize,
        bias: Vec<i32>,
        rescale: Multiplier,
        out: QuantParams,
    },
    TConv {
        weight: usize,
        bias: Vec<i32>,
        rescale: Multiplier,
        out: QuantParams,
    },
    Add {
        rescale_a: Multiplier,
        rescale_b: Multiplier,
        out: QuantParams,
    },
}

impl QOp {
    pub fn out(&self) -> QuantParams {
        match self {
            QOp::Conv { out, .. } | QOp::TConv { out, .. } | QOp::Add { out, .. } => *out,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantizedWeights {
    pub config: NetConfig,
    pub input: QuantParams,
    pub tensors: Vec<QuantTensor>,
    pub ops: Vec<QOp>,
    /// Degenerate ranges that were widened during calibration.
    pub warnings: Vec<String>,
}

/// Records running min/max of every layer output.
struct CalibBackend<'a> {
    weights: &'a Weights,
    ranges: &'a mut Vec<(f32, f32)>,
    op: usize,
}

impl CalibBackend<'_> {
    fn record(&mut self, t: Tensor) -> Result<Tensor> {
        if !t.is_finite() {
            return Err(Error::Numeric("non-finite activation during calibration".into()));
        }
        let (lo, hi) = t.data.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if self.op == self.ranges.len() {
            self.ranges.push((lo, hi));
        } else {
            let r = &mut self.ranges[self.op];
            *r = (r.0.min(lo), r.1.max(hi));
        }
        self.op += 1;
        Ok(t)
    }
}

impl Backend for CalibBackend<'_> {
    type Act = Tensor;
    fn conv(&mut self, spec: &ConvSpec, x: &Tensor, relu: bool, offset: f32) -> Result<Tensor> {
        let t = conv_f32(self.weights, spec, x, relu, offset);
        self.record(t)
    }
    fn tconv(&mut self, spec: &TConvSpec, x: &Tensor) -> Result<Tensor> {
        let t = tconv_f32(self.weights, spec, x);
        self.record(t)
    }
    fn add_relu(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let t = graph::add_relu(a, b);
        self.record(t)
    }
}

/// Symbolic pass that fixes every layer's integer parameters.
struct CompileBackend<'a> {
    weights: &'a Weights,
    ranges: &'a [(f32, f32)],
    op: usize,
    tensors: Vec<QuantTensor>,
    by_param: HashMap<usize, usize>,
    ops: Vec<QOp>,
    warnings: Vec<String>,
}

impl CompileBackend<'_> {
    fn out_params(&mut self) -> QuantParams {
        let (lo, hi) = self.ranges[self.op];
        let (qp, degenerate) = QuantParams::from_range(lo as f64, hi as f64);
        if degenerate {
            self.warnings.push(format!("activation {} has a constant range, widened", self.op));
        }
        self.op += 1;
        qp
    }

    fn weight(&mut self, param: usize) -> usize {
        if let Some(&i) = self.by_param.get(&param) {
            return i;
        }
        let p = &self.weights.params[param];
        let (lo, hi) = p.data.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let (qp, degenerate) = QuantParams::symmetric(lo as f64, hi as f64);
        if degenerate {
            self.warnings.push(format!("weight '{}' has a constant range, widened", p.name));
        }
        self.tensors.push(QuantTensor {
            name: p.name.clone(),
            shape: p.shape.clone(),
            params: qp,
            codes: p.data.iter().map(|&v| qp.quantize(v as f64)).collect(),
        });
        self.by_param.insert(param, self.tensors.len() - 1);
        self.tensors.len() - 1
    }

    /// Integer bias and accumulator rescale; rejects layers whose 32-bit
    /// accumulator could overflow.
    fn linear(&mut self, weight: usize, bias: usize, fan_in: usize, x: QuantParams, offset: f32, name: &str) -> Result<(usize, Vec<i32>, Multiplier, QuantParams)> {
        let wi = self.weight(weight);
        let wq = self.tensors[wi].params;
        let s_acc = x.scale * wq.scale;
        let mut bq = Vec::new();
        for &b in &self.weights.params[bias].data {
            let v = ((b + offset) as f64 / s_acc).round();
            if v.abs() > i32::MAX as f64 {
                return Err(Error::Numeric(format!("{name}: bias {b} overflows a 32-bit accumulator")));
            }
            bq.push(v as i32);
        }
        let max_bias = bq.iter().map(|b| (*b as i64).abs()).max().unwrap_or(0);
        let bound = fan_in as i64 * 255 * 128 + max_bias;
        if bound > i32::MAX as i64 {
            return Err(Error::Numeric(format!("{name}: accumulator bound {bound} exceeds 32 bits")));
        }
        let out = self.out_params();
        Ok((wi, bq, Multiplier::new(s_acc / out.scale)?, out))
    }
}

impl Backend for CompileBackend<'_> {
    type Act = QuantParams;
    fn conv(&mut self, spec: &ConvSpec, x: &QuantParams, _relu: bool, offset: f32) -> Result<QuantParams> {
        let fan_in = spec.in_c * spec.geom.k * spec.geom.k;
        let name = self.weights.params[spec.weight].name.clone();
        let (weight, bias, rescale, out) = self.linear(spec.weight, spec.bias, fan_in, *x, offset, &name)?;
        self.ops.push(QOp::Conv {
            weight,
            bias,
            rescale,
            out,
        });
        Ok(out)
    }
    fn tconv(&mut self, spec: &TConvSpec, x: &QuantParams) -> Result<QuantParams> {
        let name = self.weights.params[spec.weight].name.clone();
        let (weight, bias, rescale, out) = self.linear(spec.weight, spec.bias, spec.in_c, *x, 0.0, &name)?;
        self.ops.push(QOp::TConv {
            weight,
            bias,
            rescale,
            out,
        });
        Ok(out)
    }
    fn add_relu(&mut self, a: &QuantParams, b: &QuantParams) -> Result<QuantParams> {
        let out = self.out_params();
        self.ops.push(QOp::Add {
            rescale_a: Multiplier::new(a.scale / out.scale)?,
            rescale_b: Multiplier::new(b.scale / out.scale)?,
            out,
        });
        Ok(out)
    }
}

fn input_tensor(pair: &ImagePair) -> Tensor {
    pair_tensor(pair)
}

/// Calibrate activation ranges on `pairs` (running min/max over float
/// forward passes) and quantize every layer.
pub fn calibrate(weights: &Weights, pairs: &[ImagePair]) -> Result<QuantizedWeights> {
    if pairs.is_empty() {
        return Err(Error::arg("calibration needs at least one sample"));
    }
    weights.check_layout()?;
    let cfg = &weights.config;
    let arch = Architecture::new(cfg)?;
    let mut ranges = Vec::new();
    for p in pairs {
        cfg.check_input(p.height(), p.width(), p.channels())?;
        let mut b = CalibBackend {
            weights,
            ranges: &mut ranges,
            op: 0,
        };
        graph::run(&arch, &mut b, input_tensor(p))?;
    }
    let mut c = CompileBackend {
        weights,
        ranges: &ranges,
        op: 0,
        tensors: Vec::new(),
        by_param: HashMap::new(),
        ops: Vec::new(),
        warnings: Vec::new(),
    };
    graph::run(&arch, &mut c, INPUT_PARAMS)?;
    Ok(QuantizedWeights {
        config: cfg.clone(),
        input: INPUT_PARAMS,
        tensors: c.tensors,
        ops: c.ops,
        warnings: c.warnings,
    })
}

/// Fraction of float activation values on `pairs` that fall inside the
/// calibrated ranges.
pub fn range_coverage(weights: &Weights, qw: &QuantizedWeights, pairs: &[ImagePair]) -> Result<f64> {
    let arch = Architecture::new(&weights.config)?;
    let (mut inside, mut total) = (0u64, 0u64);
    for p in pairs {
        let mut counter = CoverageBackend {
            weights,
            ops: &qw.ops,
            op: 0,
            inside: 0,
            total: 0,
        };
        graph::run(&arch, &mut counter, input_tensor(p))?;
        inside += counter.inside;
        total += counter.total;
    }
    Ok(inside as f64 / total.max(1) as f64)
}

struct CoverageBackend<'a> {
    weights: &'a Weights,
    ops: &'a [QOp],
    op: usize,
    inside: u64,
    total: u64,
}

impl CoverageBackend<'_> {
    fn count(&mut self, t: Tensor) -> Result<Tensor> {
        let (lo, hi) = self.ops[self.op].out().range();
        let tol = self.ops[self.op].out().scale / 2.0;
        self.op += 1;
        for &v in &t.data {
            let v = v as f64;
            self.inside += (v >= lo - tol && v <= hi + tol) as u64;
        }
        self.total += t.data.len() as u64;
        Ok(t)
    }
}

impl Backend for CoverageBackend<'_> {
    type Act = Tensor;
    fn conv(&mut self, spec: &ConvSpec, x: &Tensor, relu: bool, offset: f32) -> Result<Tensor> {
        let t = conv_f32(self.weights, spec, x, relu, offset);
        self.count(t)
    }
    fn tconv(&mut self, spec: &TConvSpec, x: &Tensor) -> Result<Tensor> {
        let t = tconv_f32(self.weights, spec, x);
        self.count(t)
    }
    fn add_relu(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let t = graph::add_relu(a, b);
        self.count(t)
    }
}

/// Integer-only inference.
struct QuantBackend<'a> {
    qw: &'a QuantizedWeights,
    op: usize,
}

impl QuantBackend<'_> {
    fn next(&mut self) -> Result<&QOp> {
        let op = self.qw.ops.get(self.op).ok_or_else(|| Error::arg("quantized model has too few layers"))?;
        self.op += 1;
        Ok(op)
    }
}

impl Backend for QuantBackend<'_> {
    type Act = QTensor;
    fn conv(&mut self, spec: &ConvSpec, x: &QTensor, relu: bool, _offset: f32) -> Result<QTensor> {
        let qw = self.qw;
        match self.next()? {
            QOp::Conv {
                weight,
                bias,
                rescale,
                out,
            } => {
                let w = &qw.tensors[*weight];
                Ok(kernels::conv(x, &w.codes, w.params.zero_point, bias, *rescale, *out, spec.out_c, spec.geom, relu))
            }
            other => Err(Error::arg(format!("layer order mismatch: expected conv, found {other:?}"))),
        }
    }
    fn tconv(&mut self, spec: &TConvSpec, x: &QTensor) -> Result<QTensor> {
        let qw = self.qw;
        match self.next()? {
            QOp::TConv {
                weight,
                bias,
                rescale,
                out,
            } => {
                let w = &qw.tensors[*weight];
                Ok(kernels::tconv(x, &w.codes, w.params.zero_point, bias, *rescale, *out, spec.out_c))
            }
            other => Err(Error::arg(format!("layer order mismatch: expected tconv, found {other:?}"))),
        }
    }
    fn add_relu(&mut self, a: &QTensor, b: &QTensor) -> Result<QTensor> {
        match self.next()? {
            QOp::Add {
                rescale_a,
                rescale_b,
                out,
            } => Ok(kernels::add_relu(a, b, *rescale_a, *rescale_b, *out)),
            other => Err(Error::arg(format!("layer order mismatch: expected add, found {other:?}"))),
        }
    }
}

/// Forward pass in the integer domain; head outputs are dequantized and the
/// pyramid is accumulated in real arithmetic.
pub fn quant_forward(pair: &ImagePair, qw: &QuantizedWeights) -> Result<PyramidOutput> {
    let cfg = &qw.config;
    cfg.check_input(pair.height(), pair.width(), pair.channels())?;
    let arch = Architecture::new(cfg)?;
    let x = pair_tensor(pair);
    let input = QTensor {
        c: x.c,
        h: x.h,
        w: x.w,
        codes: x.data.iter().map(|&v| qw.input.quantize(v as f64)).collect(),
        params: qw.input,
    };
    let mut b = QuantBackend { qw, op: 0 };
    let heads = graph::run(&arch, &mut b, input)?;
    if b.op != qw.ops.len() {
        return Err(Error::arg("quantized model has extra layers"));
    }
    let real: Vec<Heads<Tensor>> = heads
        .iter()
        .map(|h| Heads {
            level: h.level,
            flow: h.flow.dequantize(),
            unc: h.unc.as_ref().map(QTensor::dequantize),
        })
        .collect();
    let refs: Vec<_> = real
        .iter()
        .map(|h| Heads {
            level: h.level,
            flow: &h.flow,
            unc: h.unc.as_ref(),
        })
        .collect();
    pyramid_from_heads(cfg.output_mode, &refs)
}

pub fn quant_forward_batch(pairs: &[ImagePair], qw: &QuantizedWeights) -> Result<Vec<PyramidOutput>> {
    crate::par::map(pairs, |p| quant_forward(p, qw)).into_iter().collect()
}

const QUANT_MAGIC: &[u8; 4] = b"EFNQ";

/// Write the quantized model: JSON header with parameters and layer records,
/// then every weight array's codes.
pub fn save_quantized(qw: &QuantizedWeights, path: impl AsRef<Path>) -> Result<()> {
    let payload: Vec<u8> = qw.tensors.iter().flat_map(|t| t.codes.iter().copied()).collect();
    write_archive(path.as_ref(), QUANT_MAGIC, qw, &payload)
}

pub fn load_quantized(path: impl AsRef<Path>) -> Result<QuantizedWeights> {
    let (mut qw, payload, base): (QuantizedWeights, _, _) = read_archive(path.as_ref(), QUANT_MAGIC)?;
    let mut off = 0usize;
    for t in &mut qw.tensors {
        let n: usize = t.shape.iter().product();
        let codes = payload.get(off..off + n).ok_or_else(|| Error::Format {
            offset: base + payload.len() as u64,
            msg: format!("payload truncated in tensor '{}'", t.name),
        })?;
        t.codes = codes.to_vec();
        off += n;
    }
    if off != payload.len() {
        return Err(Error::Format {
            offset: base + off as u64,
            msg: format!("{} trailing payload bytes", payload.len() - off),
        });
    }
    qw.config.validate()?;
    Ok(qw)
}
