//! The network graph, written once against an abstract backend so the same
//! topology drives float inference, training (with a gradient tape),
//! activation-range calibration and integer inference.

use super::arch::{Architecture, ConvSpec, TConvSpec, Weights};
use super::kernels::{conv_backward, conv_forward, tconv_backward, tconv_forward};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub(crate) trait Backend {
    type Act;
    /// Convolution; `offset` is a constant added after the bias.
    fn conv(&mut self, spec: &ConvSpec, x: &Self::Act, relu: bool, offset: f32) -> Result<Self::Act>;
    /// Transposed 2×2 stride-2 convolution followed by ReLU.
    fn tconv(&mut self, spec: &TConvSpec, x: &Self::Act) -> Result<Self::Act>;
    /// `relu(a + b)`.
    fn add_relu(&mut self, a: &Self::Act, b: &Self::Act) -> Result<Self::Act>;
}

/// Raw head outputs of one decoder level.
pub(crate) struct Heads<A> {
    pub level: usize,
    pub flow: A,
    pub unc: Option<A>,
}

/// Run the graph on `input` (stacked frames, channels first). Heads are
/// returned coarse to fine.
pub(crate) fn run<B: Backend>(arch: &Architecture, b: &mut B, input: B::Act) -> Result<Vec<Heads<B::Act>>> {
    let cfg = &arch.config;
    let mut enc = Vec::with_capacity(cfg.levels);
    enc.push(b.conv(&arch.stem, &input, true, 0.0)?);
    for st in &arch.stages {
        let mut h = b.conv(&st.down, enc.last().expect("stem"), true, 0.0)?;
        for blk in &st.blocks {
            let t = b.conv(&blk.conv1, &h, true, 0.0)?;
            let t = b.conv(&blk.conv2, &t, false, 0.0)?;
            h = b.add_relu(&h, &t)?;
        }
        enc.push(h);
    }
    let mut heads = Vec::new();
    let mut d: Option<B::Act> = None;
    let offset = cfg.output_mode.flow_offset();
    for dl in &arch.decoder {
        let j = cfg.levels - dl.level;
        let prev = d.as_ref().unwrap_or_else(|| enc.last().expect("encoder output"));
        let up = b.tconv(&dl.up, prev)?;
        let merged = match &dl.input_skip {
            Some(skip) => {
                let s = b.conv(skip, &input, true, 0.0)?;
                b.add_relu(&up, &s)?
            }
            None => b.add_relu(&up, &enc[j - 1])?,
        };
        let feat = b.conv(&dl.refine, &merged, true, 0.0)?;
        if let Some(fh) = &dl.flow_head {
            let flow = b.conv(fh, &feat, false, offset)?;
            let unc = match &dl.unc_head {
                Some(uh) => Some(b.conv(uh, &feat, false, 0.0)?),
                None => None,
            };
            heads.push(Heads {
                level: dl.level,
                flow,
                unc,
            });
        }
        d = Some(feat);
    }
    Ok(heads)
}

fn check(t: Tensor, what: &str) -> Result<Tensor> {
    if t.is_finite() {
        Ok(t)
    } else {
        Err(Error::Numeric(format!("non-finite activation after {what}")))
    }
}

pub(crate) fn add_relu(a: &Tensor, b: &Tensor) -> Tensor {
    debug_assert_eq!(a.shape(), b.shape());
    let data = a.data.iter().zip(&b.data).map(|(x, y)| (x + y).max(0.0)).collect();
    Tensor::from_data(a.c, a.h, a.w, data)
}

pub(crate) fn conv_f32(w: &Weights, spec: &ConvSpec, x: &Tensor, relu: bool, offset: f32) -> Tensor {
    let bias = &w.params[spec.bias].data;
    let shifted;
    let bias = if offset != 0.0 {
        shifted = bias.iter().map(|v| v + offset).collect::<Vec<_>>();
        &shifted
    } else {
        bias
    };
    conv_forward(x, &w.params[spec.weight].data, bias, spec.out_c, spec.geom, relu)
}

pub(crate) fn tconv_f32(w: &Weights, spec: &TConvSpec, x: &Tensor) -> Tensor {
    tconv_forward(x, &w.params[spec.weight].data, &w.params[spec.bias].data, spec.out_c, true)
}

/// Plain float inference.
pub(crate) struct FloatBackend<'a> {
    pub weights: &'a Weights,
}

impl Backend for FloatBackend<'_> {
    type Act = Tensor;
    fn conv(&mut self, spec: &ConvSpec, x: &Tensor, relu: bool, offset: f32) -> Result<Tensor> {
        check(conv_f32(self.weights, spec, x, relu, offset), "convolution")
    }
    fn tconv(&mut self, spec: &TConvSpec, x: &Tensor) -> Result<Tensor> {
        check(tconv_f32(self.weights, spec, x), "transposed convolution")
    }
    fn add_relu(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        Ok(add_relu(a, b))
    }
}

enum Op {
    Input,
    Conv { spec: ConvSpec, x: usize, relu: bool },
    TConv { spec: TConvSpec, x: usize },
    Add { a: usize, b: usize },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Records every activation so gradients can be propagated back to weights.
pub(crate) struct Tape<'a> {
    weights: &'a Weights,
    nodes: Vec<Node>,
}

impl<'a> Tape<'a> {
    pub fn new(weights: &'a Weights) -> Self {
        Tape {
            weights,
            nodes: Vec::new(),
        }
    }

    pub fn input(&mut self, t: Tensor) -> usize {
        self.push(t, Op::Input)
    }

    pub fn value(&self, id: usize) -> &Tensor {
        &self.nodes[id].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> usize {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    /// Propagate output gradients `seeds` back through the tape, accumulating
    /// parameter gradients into `grads` (same layout as the weights).
    pub fn backward(self, seeds: Vec<(usize, Tensor)>, grads: &mut Weights) {
        let mut g: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        for (id, t) in seeds {
            accumulate(&mut g[id], t);
        }
        let w = self.weights;
        for id in (0..self.nodes.len()).rev() {
            let Some(mut dy) = g[id].take() else { continue };
            let node = &self.nodes[id];
            match node.op {
                Op::Input => {}
                Op::Conv { spec, x, relu } => {
                    if relu {
                        mask_relu(&mut dy, &node.value);
                    }
                    let xin = &self.nodes[x].value;
                    let mut dx = self.needs_grad(x).then(|| Tensor::zeros(xin.c, xin.h, xin.w));
                    let (dw, db) = two_mut(&mut grads.params, spec.weight, spec.bias);
                    conv_backward(
                        xin,
                        &w.params[spec.weight].data,
                        spec.out_c,
                        spec.geom,
                        &dy,
                        &mut dw.data,
                        &mut db.data,
                        dx.as_mut(),
                    );
                    if let Some(dx) = dx {
                        accumulate(&mut g[x], dx);
                    }
                }
                Op::TConv { spec, x } => {
                    mask_relu(&mut dy, &node.value);
                    let xin = &self.nodes[x].value;
                    let mut dx = self.needs_grad(x).then(|| Tensor::zeros(xin.c, xin.h, xin.w));
                    let (dw, db) = two_mut(&mut grads.params, spec.weight, spec.bias);
                    tconv_backward(
                        xin,
                        &w.params[spec.weight].data,
                        spec.out_c,
                        &dy,
                        &mut dw.data,
                        &mut db.data,
                        dx.as_mut(),
                    );
                    if let Some(dx) = dx {
                        accumulate(&mut g[x], dx);
                    }
                }
                Op::Add { a, b } => {
                    mask_relu(&mut dy, &node.value);
                    accumulate(&mut g[a], dy.clone());
                    accumulate(&mut g[b], dy);
                }
            }
        }
    }

    fn needs_grad(&self, id: usize) -> bool {
        !matches!(self.nodes[id].op, Op::Input)
    }
}

fn two_mut<T>(v: &mut [T], i: usize, j: usize) -> (&mut T, &mut T) {
    assert!(i < j);
    let (lo, hi) = v.split_at_mut(j);
    (&mut lo[i], &mut hi[0])
}

fn accumulate(slot: &mut Option<Tensor>, t: Tensor) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data.iter_mut().zip(&t.data) {
                *a += b;
            }
        }
        None => *slot = Some(t),
    }
}

fn mask_relu(dy: &mut Tensor, out: &Tensor) {
    for (d, &o) in dy.data.iter_mut().zip(&out.data) {
        if o <= 0.0 {
            *d = 0.0;
        }
    }
}

impl Backend for Tape<'_> {
    type Act = usize;
    fn conv(&mut self, spec: &ConvSpec, x: &usize, relu: bool, offset: f32) -> Result<usize> {
        let v = check(conv_f32(self.weights, spec, &self.nodes[*x].value, relu, offset), "convolution")?;
        Ok(self.push(v, Op::Conv { spec: *spec, x: *x, relu }))
    }
    fn tconv(&mut self, spec: &TConvSpec, x: &usize) -> Result<usize> {
        let v = check(tconv_f32(self.weights, spec, &self.nodes[*x].value), "transposed convolution")?;
        Ok(self.push(v, Op::TConv { spec: *spec, x: *x }))
    }
    fn add_relu(&mut self, a: &usize, b: &usize) -> Result<usize> {
        let v = add_relu(&self.nodes[*a].value, &self.nodes[*b].value);
        Ok(self.push(v, Op::Add { a: *a, b: *b }))
    }
}
