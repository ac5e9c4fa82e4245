//! Versioned pipeline configuration. Unknown keys are rejected at every
//! level; omitted keys take their defaults.

use crate::adc::AdcConfig;
use crate::norm::NormConfig;
use crate::postprocess::PostConfig;
use crate::response::{Cutoffs, ReviewPolicy};
use crate::seg::SegConfig;
use crate::stats::cutoffs::GridSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;
use thiserror::Error;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("config_version {0} is not supported (expected {CONFIG_VERSION})")]
    Version(u32),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResponseConfig {
    pub cutoffs: Cutoffs,
    pub review_policy: ReviewPolicy,
}

impl Default for ResponseConfig {
    fn default() -> Self {
        ResponseConfig { cutoffs: Cutoffs::default(), review_policy: ReviewPolicy::Exclude }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StatsConfig {
    pub seed: u64,
    pub repeatability_iterations: usize,
    pub cutoff_iterations: usize,
    pub cutoff_grid: GridSpec,
    pub wilson_continuity: bool,
}

impl Default for StatsConfig {
    fn default() -> Self {
        StatsConfig {
            seed: 0,
            repeatability_iterations: crate::stats::repeatability::DEFAULT_BOOTSTRAP_ITERATIONS,
            cutoff_iterations: crate::stats::cutoffs::DEFAULT_ITERATIONS,
            cutoff_grid: GridSpec::default(),
            wilson_continuity: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub config_version: u32,
    pub adc: AdcConfig,
    pub normalization: NormConfig,
    pub segmentation: SegConfig,
    pub postprocess: PostConfig,
    pub response: ResponseConfig,
    pub stats: StatsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            config_version: CONFIG_VERSION,
            adc: AdcConfig::default(),
            normalization: NormConfig::default(),
            segmentation: SegConfig::default(),
            postprocess: PostConfig::default(),
            response: ResponseConfig::default(),
            stats: StatsConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: PipelineConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.config_version != CONFIG_VERSION {
            return Err(ConfigError::Version(self.config_version));
        }
        self.segmentation.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let p = &self.postprocess;
        if !(0.0..=1.0).contains(&p.gadc_fraction) || !(0.0..=1.0).contains(&p.organ_overlap_min) {
            return Err(ConfigError::Invalid("postprocess fractions must lie in [0, 1]".into()));
        }
        if !(self.adc.adc_max > 0.0) {
            return Err(ConfigError::Invalid("adc.adc_max must be positive".into()));
        }
        if !(self.normalization.target > 0.0) {
            return Err(ConfigError::Invalid("normalization.target must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding (all fields, fixed order).
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let cfg = PipelineConfig::from_json("{}").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert_eq!(cfg.postprocess.gadc_fraction, 0.65);
        assert_eq!(cfg.response.cutoffs.tdv_decrease, -40.0);
        let cfg = PipelineConfig::from_json(r#"{"postprocess": {"connectivity": 6}}"#).unwrap();
        assert_eq!(cfg.postprocess.connectivity, crate::postprocess::Connectivity::Six);
        assert_ne!(cfg.hash(), PipelineConfig::default().hash());
    }

    #[test]
    fn rejects_unknown_and_bad_values() {
        assert!(PipelineConfig::from_json(r#"{"adc": {"fit": 1}}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"bogus": 1}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"config_version": 2}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"postprocess": {"connectivity": 8}}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"postprocess": {"gadc_fraction": 1.5}}"#).is_err());
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(PipelineConfig::default().hash(), PipelineConfig::default().hash());
        assert_eq!(PipelineConfig::default().hash().len(), 64);
    }
}
