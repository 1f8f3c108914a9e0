//! TOML run configuration tying together the optimization settings, both
//! network architectures and the source/target distribution pair.

use crate::data::DistributionSpec;
use crate::error::{Error, Result};
use crate::icnn::IcnnConfig;
use crate::train::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Architecture block of the run configuration; `beta` is the leaky slope
/// shared by both activations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub hidden_width: usize,
    pub num_layers: usize,
    #[serde(default = "default_beta")]
    pub beta: f64,
}

fn default_beta() -> f64 {
    0.2
}

impl NetworkConfig {
    pub fn to_icnn(self) -> IcnnConfig {
        let mut cfg = IcnnConfig::new(self.input_dim, self.hidden_width, self.num_layers);
        cfg.first_activation.beta = self.beta;
        cfg.hidden_activation.beta = self.beta;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub f_network: NetworkConfig,
    pub g_network: NetworkConfig,
    pub source: DistributionSpec,
    pub target: DistributionSpec,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.source.validate()?;
        self.target.validate()?;
        let f = self.f_network.to_icnn();
        let g = self.g_network.to_icnn();
        f.validate()?;
        g.validate()?;
        if self.source.dim() != g.input_dim || self.target.dim() != f.input_dim {
            return Err(Error::Config(format!(
                "dimension mismatch: source is {}-D / g takes {}, target is {}-D / f takes {}",
                self.source.dim(),
                g.input_dim,
                self.target.dim(),
                f.input_dim
            )));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}
