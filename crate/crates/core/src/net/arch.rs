//! Layer inventory, parameter naming and initialization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::kernels::ConvGeom;
use crate::error::{Error, Result};

/// What the network's heads predict and how they are supervised.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    /// One full-resolution flow head, plain flow target.
    Raw,
    /// One full-resolution flow head predicting flow + 50.
    Shift50,
    /// Incremental flow at every level.
    Multiscale,
    /// Incremental flow and log-uncertainty at every level.
    MultiscaleUncertainty,
}

impl OutputMode {
    pub fn is_multiscale(self) -> bool {
        matches!(self, OutputMode::Multiscale | OutputMode::MultiscaleUncertainty)
    }

    /// Constant added to the flow head output.
    pub fn flow_offset(self) -> f32 {
        if self == OutputMode::Shift50 {
            SHIFT
        } else {
            0.0
        }
    }
}

impl std::str::FromStr for OutputMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" | "l1" => Ok(OutputMode::Raw),
            "shift50" | "l1_shift50" => Ok(OutputMode::Shift50),
            "multiscale" => Ok(OutputMode::Multiscale),
            "multiscale_uncertainty" => Ok(OutputMode::MultiscaleUncertainty),
            other => Err(Error::arg(format!("unknown output mode '{other}'"))),
        }
    }
}

pub(crate) const SHIFT: f32 = 50.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub levels: usize,
    pub base_channels: usize,
    pub blocks_per_stage: usize,
    pub uncertainty_head: bool,
    pub output_mode: OutputMode,
    /// Channels per frame (1 or 3); the network sees twice this many.
    pub frame_channels: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            levels: 3,
            base_channels: 16,
            blocks_per_stage: 2,
            uncertainty_head: true,
            output_mode: OutputMode::MultiscaleUncertainty,
            frame_channels: 3,
        }
    }
}

impl NetConfig {
    /// Desk config for a given output mode.
    pub fn with_mode(mode: OutputMode) -> Self {
        NetConfig {
            uncertainty_head: mode == OutputMode::MultiscaleUncertainty,
            output_mode: mode,
            ..Default::default()
        }
    }

    /// Roughly 2M parameters.
    pub fn full_scale() -> Self {
        NetConfig {
            base_channels: 48,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::arg("levels must be at least 1"));
        }
        if self.levels > 6 {
            return Err(Error::arg(format!("levels {} exceeds 6", self.levels)));
        }
        if self.base_channels < 2 || self.base_channels % 2 != 0 {
            return Err(Error::arg(format!(
                "base_channels must be even and >= 2, got {}",
                self.base_channels
            )));
        }
        if self.frame_channels != 1 && self.frame_channels != 3 {
            return Err(Error::arg(format!(
                "frame_channels must be 1 or 3, got {}",
                self.frame_channels
            )));
        }
        if self.uncertainty_head != (self.output_mode == OutputMode::MultiscaleUncertainty) {
            return Err(Error::arg(
                "uncertainty_head must be set exactly in multiscale_uncertainty mode",
            ));
        }
        Ok(())
    }

    /// Total downsampling factor of the encoder; input dims must be multiples.
    pub fn stride_product(&self) -> usize {
        1 << self.levels
    }

    /// Levels whose heads are active, coarse to fine.
    pub fn active_levels(&self) -> std::ops::RangeInclusive<usize> {
        if self.output_mode.is_multiscale() {
            1..=self.levels
        } else {
            self.levels..=self.levels
        }
    }

    /// Check that a `height × width` input can pass through the network.
    pub fn check_input(&self, height: usize, width: usize, channels: usize) -> Result<()> {
        let s = self.stride_product();
        if height % s != 0 || height == 0 {
            return Err(Error::arg(format!("height {height} is not a positive multiple of {s}")));
        }
        if width % s != 0 || width == 0 {
            return Err(Error::arg(format!("width {width} is not a positive multiple of {s}")));
        }
        if channels != self.frame_channels {
            return Err(Error::arg(format!(
                "frame channels {channels} do not match network ({})",
                self.frame_channels
            )));
        }
        Ok(())
    }

    /// Feature width at resolution `H / 2^j`.
    pub(crate) fn width_at(&self, j: usize) -> usize {
        if j == 0 {
            self.base_channels / 2
        } else {
            self.base_channels << (j - 1)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvSpec {
    pub weight: usize,
    pub bias: usize,
    pub in_c: usize,
    pub out_c: usize,
    pub geom: ConvGeom,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct TConvSpec {
    pub weight: usize,
    pub bias: usize,
    pub in_c: usize,
    pub out_c: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct Block {
    pub conv1: ConvSpec,
    pub conv2: ConvSpec,
}

#[derive(Clone, Debug)]
pub(crate) struct Stage {
    pub down: ConvSpec,
    pub blocks: Vec<Block>,
}

#[derive(Clone, Debug)]
pub(crate) struct DecoderLevel {
    pub level: usize,
    pub up: TConvSpec,
    /// Skip from the raw input, only at full resolution.
    pub input_skip: Option<ConvSpec>,
    pub refine: ConvSpec,
    pub flow_head: Option<ConvSpec>,
    pub unc_head: Option<ConvSpec>,
}

#[derive(Clone, Debug)]
pub(crate) enum HeadInit {
    He,
    Zero,
}

/// Shape and init rule of one named parameter.
#[derive(Clone, Debug)]
pub(crate) struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub fan_in: usize,
    pub init: HeadInit,
}

#[derive(Clone, Debug)]
pub(crate) struct Architecture {
    pub config: NetConfig,
    pub stem: ConvSpec,
    pub stages: Vec<Stage>,
    pub decoder: Vec<DecoderLevel>,
    pub params: Vec<ParamSpec>,
}

struct Builder {
    params: Vec<ParamSpec>,
}

impl Builder {
    fn conv(&mut self, name: &str, in_c: usize, out_c: usize, k: usize, stride: usize, init: HeadInit) -> ConvSpec {
        let fan_in = in_c * k * k;
        let weight = self.params.len();
        self.params.push(ParamSpec {
            name: format!("{name}.weight"),
            shape: vec![out_c, in_c, k, k],
            fan_in,
            init,
        });
        let bias = self.params.len();
        self.params.push(ParamSpec {
            name: format!("{name}.bias"),
            shape: vec![out_c],
            fan_in,
            init: HeadInit::Zero,
        });
        ConvSpec {
            weight,
            bias,
            in_c,
            out_c,
            geom: ConvGeom { k, stride, pad: k / 2 },
        }
    }

    fn tconv(&mut self, name: &str, in_c: usize, out_c: usize) -> TConvSpec {
        let weight = self.params.len();
        self.params.push(ParamSpec {
            name: format!("{name}.weight"),
            shape: vec![in_c, out_c, 2, 2],
            fan_in: in_c,
            init: HeadInit::He,
        });
        let bias = self.params.len();
        self.params.push(ParamSpec {
            name: format!("{name}.bias"),
            shape: vec![out_c],
            fan_in: in_c,
            init: HeadInit::Zero,
        });
        TConvSpec {
            weight,
            bias,
            in_c,
            out_c,
        }
    }
}

impl Architecture {
    pub fn new(config: &NetConfig) -> Result<Self> {
        config.validate()?;
        let l = config.levels;
        let in_c = 2 * config.frame_channels;
        let mut b = Builder { params: Vec::new() };
        let stem = b.conv("stem", in_c, config.width_at(1), 3, 2, HeadInit::He);
        let mut stages = Vec::new();
        for s in 1..l {
            let (ci, co) = (config.width_at(s), config.width_at(s + 1));
            let down = b.conv(&format!("enc{s}.down"), ci, co, 3, 2, HeadInit::He);
            let blocks = (0..config.blocks_per_stage)
                .map(|k| Block {
                    conv1: b.conv(&format!("enc{s}.block{k}.conv1"), co, co, 3, 1, HeadInit::He),
                    conv2: b.conv(&format!("enc{s}.block{k}.conv2"), co, co, 3, 1, HeadInit::He),
                })
                .collect();
            stages.push(Stage { down, blocks });
        }
        let mut decoder = Vec::new();
        for lvl in 1..=l {
            let j = l - lvl;
            let (ci, co) = (config.width_at(j + 1), config.width_at(j));
            let up = b.tconv(&format!("dec{lvl}.up"), ci, co);
            let input_skip =
                (j == 0).then(|| b.conv(&format!("dec{lvl}.skip"), in_c, co, 3, 1, HeadInit::He));
            let refine = b.conv(&format!("dec{lvl}.refine"), co, co, 3, 1, HeadInit::He);
            let active = config.active_levels().contains(&lvl);
            let head_init = || if lvl >= 2 && config.output_mode.is_multiscale() { HeadInit::Zero } else { HeadInit::He };
            let flow_head = active.then(|| b.conv(&format!("dec{lvl}.flow_head"), co, 2, 1, 1, head_init()));
            let unc_head = (active && config.uncertainty_head)
                .then(|| b.conv(&format!("dec{lvl}.unc_head"), co, 1, 1, 1, head_init()));
            decoder.push(DecoderLevel {
                level: lvl,
                up,
                input_skip,
                refine,
                flow_head,
                unc_head,
            });
        }
        Ok(Architecture {
            config: config.clone(),
            stem,
            stages,
            decoder,
            params: b.params,
        })
    }

    fn convs(&self) -> impl Iterator<Item = (&ConvSpec, usize)> + '_ {
        // (spec, resolution exponent of the output)
        let l = self.config.levels;
        std::iter::once((&self.stem, 1))
            .chain(self.stages.iter().enumerate().flat_map(move |(s, st)| {
                std::iter::once((&st.down, s + 2))
                    .chain(st.blocks.iter().flat_map(move |b| [(&b.conv1, s + 2), (&b.conv2, s + 2)]))
            }))
            .chain(self.decoder.iter().flat_map(move |d| {
                let j = l - d.level;
                d.input_skip
                    .iter()
                    .chain(std::iter::once(&d.refine))
                    .chain(d.flow_head.iter())
                    .chain(d.unc_head.iter())
                    .map(move |c| (c, j))
            }))
    }
}

/// One named parameter array.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// All learnable arrays of a network, in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights {
    pub config: NetConfig,
    pub params: Vec<Param>,
}

impl Weights {
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.data.iter().all(|v| v.is_finite()))
    }

    /// Same layout, all zeros.
    pub fn zeros_like(&self) -> Weights {
        Weights {
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: vec![0.0; p.data.len()],
                })
                .collect(),
        }
    }

    /// Flattened view of every parameter, in order.
    pub fn flat(&self) -> Vec<f32> {
        self.params.iter().flat_map(|p| p.data.iter().copied()).collect()
    }

    /// Check that the arrays match what `config` requires.
    pub fn check_layout(&self) -> Result<()> {
        let arch = Architecture::new(&self.config)?;
        if arch.params.len() != self.params.len() {
            return Err(Error::arg(format!(
                "weights hold {} arrays, config needs {}",
                self.params.len(),
                arch.params.len()
            )));
        }
        for (spec, p) in arch.params.iter().zip(&self.params) {
            if spec.name != p.name || spec.shape != p.shape {
                return Err(Error::arg(format!(
                    "weight '{}' {:?} does not match expected '{}' {:?}",
                    p.name, p.shape, spec.name, spec.shape
                )));
            }
            if p.data.len() != p.shape.iter().product::<usize>() {
                return Err(Error::arg(format!("weight '{}' has wrong length", p.name)));
            }
        }
        if !self.is_finite() {
            return Err(Error::Numeric("weights contain non-finite values".into()));
        }
        Ok(())
    }
}

/// Seeded He-normal initialization; delta heads above the coarsest level start at zero.
pub fn init_weights(config: &NetConfig, seed: u64) -> Result<Weights> {
    let arch = Architecture::new(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = arch
        .params
        .iter()
        .map(|spec| {
            let n: usize = spec.shape.iter().product();
            let data = match spec.init {
                HeadInit::Zero => vec![0.0; n],
                HeadInit::He => {
                    let std = (2.0 / spec.fan_in as f32).sqrt();
                    let dist = Normal::new(0.0, std).expect("finite std");
                    (0..n).map(|_| dist.sample(&mut rng)).collect()
                }
            };
            Param {
                name: spec.name.clone(),
                shape: spec.shape.clone(),
                data,
            }
        })
        .collect();
    Ok(Weights {
        config: config.clone(),
        params,
    })
}

/// Multiply-accumulate count ×2 of one convolution.
pub fn conv_flops(in_c: usize, out_c: usize, k: usize, stride: usize, height: usize, width: usize) -> u64 {
    let g = ConvGeom { k, stride, pad: k / 2 };
    let (oh, ow) = g.out_dims(height, width);
    2 * (oh * ow * in_c * out_c * k * k) as u64
}

/// Analytic forward cost at `height × width` and learnable parameter count.
pub fn flops_and_params(config: &NetConfig, height: usize, width: usize) -> Result<(u64, usize)> {
    let arch = Architecture::new(config)?;
    let mut flops = 0u64;
    for (c, j) in arch.convs() {
        // input grid of a stride-s conv is s times its output grid
        let s = c.geom.stride;
        let (h, w) = ((height >> j) * s, (width >> j) * s);
        flops += conv_flops(c.in_c, c.out_c, c.geom.k, s, h, w);
    }
    for d in &arch.decoder {
        let j = config.levels - d.level;
        let pix = (height >> (j + 1)) * (width >> (j + 1));
        flops += 2 * (pix * d.up.in_c * d.up.out_c * 4) as u64;
    }
    let params = arch.params.iter().map(|p| p.shape.iter().product::<usize>()).sum();
    Ok((flops, params))
}
