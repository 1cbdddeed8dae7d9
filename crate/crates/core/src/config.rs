//! TOML run configuration with one section per component.
//!
//! ```toml
//! seed = 7
//!
//! [synth]
//! height = 48
//! width = 64
//!
//! [train]
//! epochs = 10
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latency::VehicleParams;
use crate::net::NetConfig;
use crate::synthgen::SceneDistribution;
use crate::train::{LossConfig, TrainConfig};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub seed: Option<u64>,
    pub synth: SceneDistribution,
    pub net: NetConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub vehicle: VehicleParams,
}

impl AppConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::arg(format!("config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::arg(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_sections_fill_defaults() {
        let c = AppConfig::parse("seed = 3\n[train]\nepochs = 2\n[vehicle]\ndepth = 5.0\n").unwrap();
        assert_eq!(c.seed, Some(3));
        assert_eq!(c.train.epochs, 2);
        assert_eq!(c.train.batch_size, TrainConfig::default().batch_size);
        assert_eq!(c.vehicle.depth, 5.0);
        assert_eq!(c.net, NetConfig::default());
    }

    #[test]
    fn round_trip_and_unknown_keys() {
        let c = AppConfig::default();
        assert_eq!(AppConfig::parse(&c.to_toml()).unwrap(), c);
        assert!(AppConfig::parse("bogus = 1").unwrap_err().is_argument());
        assert!(AppConfig::parse("[train\n").unwrap_err().is_argument());
    }
}
