//! TOML experiment configuration. Every section rejects unknown keys.
//!
//! ```toml
//! [workload]
//! kind = "gaussian_qk"
//! n = 2048
//! d = 64
//! heads = 4
//! group_size = 2
//! count = 8
//! seed = 7
//!
//! [selector]
//! kind = "quest"
//! budget = { fraction = 0.25 }
//!
//! [prune]
//! p = 0.9
//!
//! [pipeline]
//! estimator = "4"
//! bypass_layers = []
//! ```

use std::fs;
use std::path::Path;

use serde::Deserialize;
use topp_core::pipeline::{EstimatorMode, PipelineConfig, DEFAULT_SELECTOR_FRACTION};
use topp_core::selectors::SelectorConfig;
use topp_core::BinarySearchConfig;

use crate::workload::WorkloadSpec;
use crate::HarnessError;

/// Pipeline options that are not selector or pruner settings.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineSection {
    pub estimator: EstimatorMode,
    pub renormalize_output: bool,
    pub bypass_layers: Vec<usize>,
    pub selector_fraction: f64,
}

impl Default for PipelineSection {
    fn default() -> Self {
        let d = PipelineConfig::default();
        Self {
            estimator: d.estimator,
            renormalize_output: d.renormalize_output,
            bypass_layers: d.bypass_layers,
            selector_fraction: DEFAULT_SELECTOR_FRACTION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub workload: WorkloadSpec,
    pub selector: SelectorConfig,
    pub prune: BinarySearchConfig,
    pub pipeline: PipelineSection,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let cfg: Config = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.workload.validate()?;
        self.pipeline_config()
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            selector: self.selector.clone(),
            prune: self.prune,
            estimator: self.pipeline.estimator,
            renormalize_output: self.pipeline.renormalize_output,
            group_size: self.workload.group_size,
            bypass_layers: self.pipeline.bypass_layers.clone(),
            selector_fraction: self.pipeline.selector_fraction,
        }
    }
}
