//! The merged run configuration and dotted-key overrides.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::augmentation::AugConfig;
use crate::dataio::Split;
use crate::error::{invalid, io_err, Result};
use crate::features::FeatureConfig;
use crate::mixtoken::{MixTokenConfig, TrainConfig};
use crate::segmentation::SegConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub window_len: usize,
    pub stride: usize,
    pub split_ratios: (f64, f64, f64),
    pub split_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            window_len: 100,
            stride: 20,
            split_ratios: (0.7, 0.15, 0.15),
            split_seed: 42,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Consecutive identical window predictions that decide a clip.
    pub k: usize,
    pub split: Split,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { k: 3, split: Split::Test }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// When set, overrides every section's seed.
    pub seed: Option<u64>,
    pub data: DataConfig,
    pub segmentation: SegConfig,
    pub augmentation: AugConfig,
    pub features: FeatureConfig,
    pub model: MixTokenConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(io_err(path))
    }

    /// Applies `section.field = value` overrides. Values are parsed as JSON
    /// when possible (`0.01`, `true`, `[1,2]`) and taken as strings otherwise.
    pub fn with_overrides<'a>(&self, overrides: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut tree = serde_json::to_value(self)?;
        for (key, raw) in overrides {
            let parts: Vec<&str> = key.split('.').collect();
            if parts.iter().any(|p| p.is_empty()) {
                return invalid(format!("malformed override key {key:?}"));
            }
            let mut node = &mut tree;
            for (i, p) in parts.iter().enumerate() {
                let obj = match node.as_object_mut() {
                    Some(o) => o,
                    None => return invalid(format!("override {key:?}: {} is not a section", parts[..i].join("."))),
                };
                node = match obj.get_mut(*p) {
                    Some(v) => v,
                    None => return invalid(format!("unknown configuration key {key:?}")),
                };
            }
            *node = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        }
        let cfg: RunConfig = serde_json::from_value(tree)
            .map_err(|e| crate::error::Error::InvalidInput(format!("override produced an invalid configuration: {e}")))?;
        Ok(cfg)
    }

    /// Copy with the shared seed pushed into every section and the model's
    /// window length and feature settings synchronized with the data and
    /// feature sections.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        if let Some(s) = c.seed {
            c.data.split_seed = s;
            c.augmentation.seed = s;
            c.model.init_seed = s;
            c.train.seed = s;
        }
        c.model.window_len = c.data.window_len;
        c.model.features = c.features.clone();
        c
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.resolved();
        r.model.validate()?;
        r.train.validate()?;
        r.augmentation.validate()?;
        r.segmentation.validate(r.model.sample_rate_hz)?;
        if r.data.stride == 0 || r.eval.k == 0 {
            return invalid("data.stride and eval.k must be at least 1");
        }
        Ok(())
    }
}
