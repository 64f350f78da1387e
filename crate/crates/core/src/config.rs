//! Pipeline configuration file.
//!
//! A TOML document with optional `[scene]`, `[grid]`, `[dataset]`,
//! `[network]` and `[train]` tables. Omitted keys take their defaults;
//! unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{GridSpec, SceneConfig};
use crate::network::{NetworkSpec, Variant};
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub split_fraction: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { split_fraction: 0.8, seed: 0 }
    }
}

/// Network widths; the variant and block count are chosen per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub base_channels: usize,
    pub channel_multipliers: Vec<usize>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { base_channels: 16, channel_multipliers: vec![1, 2, 4, 8] }
    }
}

impl NetworkConfig {
    pub fn spec(&self, variant: Variant, block_count: usize, input_shape: [usize; 3]) -> Result<NetworkSpec> {
        let spec = NetworkSpec {
            base_channels: self.base_channels,
            channel_multipliers: self.channel_multipliers.clone(),
            ..NetworkSpec::new(variant, block_count, input_shape)
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub scene: SceneConfig,
    pub grid: GridSpec,
    pub dataset: DatasetConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable")
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.grid.positions()?;
        let f = self.dataset.split_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Config(format!("split_fraction must lie in (0, 1), got {f}")));
        }
        self.train.validate()
    }
}
