use serde::{Deserialize, Serialize};

use super::MixTokenConfig;
use crate::domain::Window;
use crate::error::{invalid, Result};
use crate::features::{filterbank_planned, tokenize, FeatureConfig, FeatureMasks, SpectrumPlanner, TokenGroup};
use crate::filter::ZeroPhasePlan;

/// Token groups in sequence order: time, frequency, cross pairs, PCA.
pub const N_GROUPS: usize = 4;

fn group_slot(g: TokenGroup) -> usize {
    match g {
        TokenGroup::Time => 0,
        TokenGroup::Frequency => 1,
        TokenGroup::Cross => 2,
        TokenGroup::Pca => 3,
    }
}

/// `sign(v) * ln(1 + |v|)`; compresses feature magnitudes (energies reach
/// hundreds on normalized windows) while keeping sign and zero.
pub fn signed_log1p(v: f64) -> f64 {
    v.signum() * v.abs().ln_1p()
}

/// Model-ready tensors for one window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreparedWindow {
    /// Filterbank output laid out `[channel][band][time]`.
    pub bands: Vec<f64>,
    /// Flattened token values per group, tokens in sequence order.
    pub groups: [Vec<f64>; N_GROUPS],
    pub label: usize,
    pub clip_ref: String,
    pub start_index: usize,
}

/// Turns normalized windows into [`PreparedWindow`]s, caching filter and
/// FFT plans across windows of the same length.
pub struct Preparer {
    channels: usize,
    window_len: usize,
    rate_hz: f64,
    features: FeatureConfig,
    masks: FeatureMasks,
    plans: Vec<ZeroPhasePlan>,
    planner: SpectrumPlanner,
}

impl Preparer {
    pub fn new(cfg: &MixTokenConfig, masks: FeatureMasks) -> Result<Self> {
        cfg.validate()?;
        let plans = cfg
            .features
            .filterbank
            .filters(cfg.sample_rate_hz)?
            .iter()
            .map(|f| f.zero_phase_plan(cfg.window_len))
            .collect();
        Ok(Self {
            channels: cfg.n_channels(),
            window_len: cfg.window_len,
            rate_hz: cfg.sample_rate_hz,
            features: cfg.features.clone(),
            masks,
            plans,
            planner: SpectrumPlanner::new(),
        })
    }

    pub fn masks(&self) -> FeatureMasks {
        self.masks
    }

    pub fn prepare(&mut self, w: &Window) -> Result<PreparedWindow> {
        if w.len() != self.window_len {
            return invalid(format!("window of {} samples, model expects {}", w.len(), self.window_len));
        }
        if w.channels() < self.channels {
            return invalid(format!("window has {} channels, model needs {}", w.channels(), self.channels));
        }
        let samples = w.samples.take_columns(self.channels)?;
        let fb = filterbank_planned(&samples, &self.plans)?;
        let cb = fb.cols();
        let mut bands = Vec::with_capacity(cb * self.window_len);
        for col in 0..cb {
            bands.extend(fb.column(col));
        }
        let view = Window {
            samples,
            ..w.clone()
        };
        let seq = tokenize(&view, &self.features, self.masks, self.rate_hz, &mut self.planner)?;
        let mut groups: [Vec<f64>; N_GROUPS] = Default::default();
        for t in seq.tokens {
            groups[group_slot(t.group)].extend(t.values.into_iter().map(signed_log1p));
        }
        Ok(PreparedWindow {
            bands,
            groups,
            label: w.label.benchmark_id as usize,
            clip_ref: w.clip_ref.clone(),
            start_index: w.start_index,
        })
    }

    pub fn prepare_all(&mut self, windows: &[Window]) -> Result<Vec<PreparedWindow>> {
        windows.iter().map(|w| self.prepare(w)).collect()
    }
}
