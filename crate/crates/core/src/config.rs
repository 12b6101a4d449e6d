//! Run configuration: one JSON document covering dataset generation, model
//! structure, training, inference, and evaluation. CLI flags override file
//! values; `--dump-config` prints the fully resolved document for
//! provenance.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::SynthConfig;
use crate::error::{CoreError, Result};
use crate::training::{ModelConfig, TrainConfig};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Smoothing applied to upsampled score maps, in pixels.
    pub sigma_smooth: f64,
    /// Integration limit of the per-region-overlap curve.
    pub fpr_limit: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            synth: SynthConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            sigma_smooth: 4.0,
            fpr_limit: 0.3,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&raw)
            .map_err(|e| CoreError::Json { path: path.to_path_buf(), source: e })?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.synth.image_size != self.model.image_size {
            return Err(CoreError::InvalidConfig(format!(
                "generator image size {} differs from model image size {}",
                self.synth.image_size, self.model.image_size
            )));
        }
        if self.sigma_smooth < 0.0 {
            return Err(CoreError::InvalidConfig(
                "sigma_smooth must be non-negative".into(),
            ));
        }
        if !(0.0 < self.fpr_limit && self.fpr_limit <= 1.0) {
            return Err(CoreError::InvalidConfig(
                "fpr_limit must sit in (0, 1]".into(),
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let json = cfg.to_json();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"sigma_smooth": 2.0}"#).unwrap();
        assert_eq!(cfg.sigma_smooth, 2.0);
        assert_eq!(cfg.fpr_limit, 0.3);
        assert_eq!(cfg.train.epochs, 160);
        assert_eq!(cfg.train.batch_size, 4);
        assert!((cfg.train.lr_adaptor - 5e-5).abs() < 1e-18);
        assert!((cfg.train.lr_discriminator - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn inconsistent_sizes_are_rejected() {
        let mut cfg = RunConfig::default();
        cfg.synth.image_size = 32;
        assert!(cfg.validate().is_err());
    }
}
