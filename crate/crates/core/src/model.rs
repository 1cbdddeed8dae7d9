//! A float or quantized network behind one inference interface.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use crate::datamodel::{FlowField, ImagePair};
use crate::error::{Error, Result};
use crate::net::{forward, forward_batch, load_weights, NetConfig, PyramidOutput, Weights};
use crate::quantsim::{load_quantized, quant_forward, quant_forward_batch, QuantizedWeights};

#[derive(Clone, Copy, Debug)]
pub enum Model<'a> {
    Float(&'a Weights),
    Quant(&'a QuantizedWeights),
}

impl Model<'_> {
    pub fn config(&self) -> &NetConfig {
        match self {
            Model::Float(w) => &w.config,
            Model::Quant(q) => &q.config,
        }
    }

    pub fn is_quantized(&self) -> bool {
        matches!(self, Model::Quant(_))
    }

    pub fn pyramid(&self, pair: &ImagePair) -> Result<PyramidOutput> {
        match self {
            Model::Float(w) => forward(pair, w),
            Model::Quant(q) => quant_forward(pair, q),
        }
    }

    pub fn infer(&self, pair: &ImagePair) -> Result<FlowField> {
        Ok(self.pyramid(pair)?.flow().clone())
    }

    /// Batched inference; items may run concurrently, results keep input order.
    pub fn infer_batch(&self, pairs: &[ImagePair]) -> Result<Vec<FlowField>> {
        let out = match self {
            Model::Float(w) => forward_batch(pairs, w)?,
            Model::Quant(q) => quant_forward_batch(pairs, q)?,
        };
        Ok(out.into_iter().map(|p| p.flow().clone()).collect())
    }
}

/// A checkpoint of either kind, detected from its magic bytes.
#[derive(Clone, Debug)]
pub enum LoadedModel {
    Float(Weights),
    Quant(QuantizedWeights),
}

impl LoadedModel {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut magic = [0u8; 4];
        File::open(path)
            .and_then(|mut f| f.read_exact(&mut magic))
            .map_err(|e| Error::io(path, e))?;
        match &magic {
            b"EFNW" => Ok(LoadedModel::Float(load_weights(path)?)),
            b"EFNQ" => Ok(LoadedModel::Quant(load_quantized(path)?)),
            _ => Err(Error::Format {
                offset: 0,
                msg: format!("{} is not a weights file", path.display()),
            }),
        }
    }

    pub fn as_model(&self) -> Model<'_> {
        match self {
            LoadedModel::Float(w) => Model::Float(w),
            LoadedModel::Quant(q) => Model::Quant(q),
        }
    }
}
