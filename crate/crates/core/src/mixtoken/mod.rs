//! Two-branch classifier: a residual 1-D CNN over filterbank views and a
//! transformer over statistical feature tokens, with three prediction heads
//! mixed by a learned softmax weighting.

mod ablation;
mod model;
mod prepare;
mod train;

pub use ablation::{ablate_features, AblationMask, AblationMode, AblationOutcome};
pub use model::{MixTokenModel, Outputs};
pub use prepare::{signed_log1p, PreparedWindow, Preparer, N_GROUPS};
pub use train::{class_weights, fit, EpochRecord, FitOptions, History, Precision, TrainConfig};

use serde::{Deserialize, Serialize};

use crate::domain::{IMU_CHANNELS, N_BENCHMARK_CLASSES};
use crate::error::{invalid, Result};
use crate::features::FeatureConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CnnConfig {
    /// Output channels of each residual block.
    pub widths: Vec<usize>,
    pub kernel: usize,
    pub strides: Vec<usize>,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            widths: vec![32, 48, 64],
            kernel: 5,
            strides: vec![1, 2, 2],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformerConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ff_dim: usize,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_heads: 4,
            n_layers: 2,
            ff_dim: 128,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixTokenConfig {
    pub n_classes: usize,
    /// Feed the PPG channel as a seventh input channel.
    pub use_ppg: bool,
    pub window_len: usize,
    pub sample_rate_hz: f64,
    pub cnn: CnnConfig,
    pub transformer: TransformerConfig,
    pub head_hidden: usize,
    pub dropout: f64,
    pub features: FeatureConfig,
    pub fusion_init: [f64; 3],
    /// Seed for parameter initialization.
    pub init_seed: u64,
}

impl Default for MixTokenConfig {
    fn default() -> Self {
        Self {
            n_classes: N_BENCHMARK_CLASSES,
            use_ppg: false,
            window_len: 100,
            sample_rate_hz: 100.0,
            cnn: CnnConfig::default(),
            transformer: TransformerConfig::default(),
            head_hidden: 128,
            dropout: 0.1,
            features: FeatureConfig::default(),
            fusion_init: [0.0; 3],
            init_seed: 42,
        }
    }
}

impl MixTokenConfig {
    /// A few-thousand-parameter variant used for finite-difference checks.
    pub fn reduced() -> Self {
        Self {
            window_len: 32,
            cnn: CnnConfig {
                widths: vec![4, 4],
                kernel: 3,
                strides: vec![1, 2],
            },
            transformer: TransformerConfig {
                d_model: 8,
                n_heads: 2,
                n_layers: 1,
                ff_dim: 8,
            },
            head_hidden: 8,
            dropout: 0.0,
            ..Self::default()
        }
    }

    pub fn n_channels(&self) -> usize {
        IMU_CHANNELS + usize::from(self.use_ppg)
    }

    pub fn n_bands(&self) -> usize {
        self.features.filterbank.bands.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return invalid("need at least two classes");
        }
        if self.cnn.widths.is_empty() || self.cnn.widths.len() != self.cnn.strides.len() {
            return invalid("cnn.widths and cnn.strides must be non-empty and equally long");
        }
        if self.cnn.kernel % 2 == 0 || self.cnn.strides.contains(&0) || self.cnn.widths.contains(&0) {
            return invalid("cnn kernel must be odd; strides and widths positive");
        }
        let t = &self.transformer;
        if t.d_model == 0 || t.n_heads == 0 || t.d_model % t.n_heads != 0 {
            return invalid(format!("{} heads do not divide d_model {}", t.n_heads, t.d_model));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return invalid("dropout must lie in [0, 1)");
        }
        if self.window_len < 4 || self.n_bands() == 0 {
            return invalid("window_len must be at least 4 and the filterbank non-empty");
        }
        if self.fusion_init.iter().any(|v| !v.is_finite()) {
            return invalid("fusion_init must be finite");
        }
        Ok(())
    }
}

/// Softmax of the three fusion logits.
pub fn fusion_weights(w: [f64; 3]) -> [f64; 3] {
    let m = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = w.map(|v| (v - m).exp());
    let s: f64 = e.iter().sum();
    e.map(|v| v / s)
}

/// `pi_0 * cnn + pi_1 * attn + pi_2 * fused` with `pi = softmax(w)`.
pub fn fuse(cnn: &[f64], attn: &[f64], fused: &[f64], w: [f64; 3]) -> Result<Vec<f64>> {
    if cnn.len() != attn.len() || cnn.len() != fused.len() {
        return invalid(format!(
            "head logits differ in length: {}, {}, {}",
            cnn.len(),
            attn.len(),
            fused.len()
        ));
    }
    let pi = fusion_weights(w);
    Ok(cnn
        .iter()
        .zip(attn)
        .zip(fused)
        .map(|((a, b), c)| pi[0] * a + pi[1] * b + pi[2] * c)
        .collect())
}
