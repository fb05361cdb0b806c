use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::features::FeatureMasks;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMask {
    None,
    Time,
    Frequency,
    Cross,
    Shape,
    /// Statistical branch detached; only the CNN head produces logits.
    TransformerRemoved,
}

impl AblationMask {
    pub const SINGLE_GROUPS: [AblationMask; 4] = [
        AblationMask::Time,
        AblationMask::Frequency,
        AblationMask::Cross,
        AblationMask::Shape,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => Self::None,
            "time" => Self::Time,
            "frequency" | "freq" => Self::Frequency,
            "cross" => Self::Cross,
            "shape" => Self::Shape,
            "transformer" | "transformer_removed" | "transformer-branch-removed" => Self::TransformerRemoved,
            other => return invalid(format!("unknown ablation mask {other:?}")),
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Time => "time",
            Self::Frequency => "frequency",
            Self::Cross => "cross",
            Self::Shape => "shape",
            Self::TransformerRemoved => "transformer_removed",
        }
    }

    pub fn feature_masks(self) -> FeatureMasks {
        let mut m = FeatureMasks::NONE;
        match self {
            Self::Time => m.time = true,
            Self::Frequency => m.frequency = true,
            Self::Cross => m.cross = true,
            Self::Shape => m.shape = true,
            Self::None | Self::TransformerRemoved => {}
        }
        m
    }

    pub fn cnn_only(self) -> bool {
        self == Self::TransformerRemoved
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    /// Train a fresh model under each mask.
    #[default]
    Retrain,
    /// Apply each mask to the test inputs of the baseline model only.
    Reevaluate,
}

impl AblationMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "retrain" => Ok(Self::Retrain),
            "reevaluate" | "re-evaluate" => Ok(Self::Reevaluate),
            other => invalid(format!("unknown ablation mode {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationOutcome {
    pub mask: AblationMask,
    pub window_macro_f1: f64,
    pub clip_macro_f1: f64,
    /// Baseline window macro-F1 minus this run's.
    pub window_drop: f64,
}

/// Runs the unmasked baseline and then every requested mask through `run`,
/// which returns `(window macro-F1, clip macro-F1)` for one mask. The
/// baseline is always the first entry.
pub fn ablate_features<F>(masks: &[AblationMask], mut run: F) -> Result<Vec<AblationOutcome>>
where
    F: FnMut(AblationMask) -> Result<(f64, f64)>,
{
    let (base_w, base_c) = run(AblationMask::None)?;
    let mut out = vec![AblationOutcome {
        mask: AblationMask::None,
        window_macro_f1: base_w,
        clip_macro_f1: base_c,
        window_drop: 0.0,
    }];
    for &m in masks.iter().filter(|m| **m != AblationMask::None) {
        let (w, c) = run(m)?;
        out.push(AblationOutcome {
            mask: m,
            window_macro_f1: w,
            clip_macro_f1: c,
            window_drop: base_w - w,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_round_trip() {
        for m in [
            AblationMask::None,
            AblationMask::Time,
            AblationMask::Frequency,
            AblationMask::Cross,
            AblationMask::Shape,
            AblationMask::TransformerRemoved,
        ] {
            assert_eq!(AblationMask::parse(m.as_str()).unwrap(), m);
        }
        assert!(AblationMask::parse("wavelet").is_err());
    }

    #[test]
    fn baseline_runs_first_and_drops_are_relative() {
        let mut seen = Vec::new();
        let out = ablate_features(&[AblationMask::Frequency, AblationMask::Time], |m| {
            seen.push(m);
            Ok(match m {
                AblationMask::Frequency => (0.5, 0.6),
                AblationMask::Time => (0.8, 0.9),
                _ => (0.9, 1.0),
            })
        })
        .unwrap();
        assert_eq!(seen, vec![AblationMask::None, AblationMask::Frequency, AblationMask::Time]);
        assert!((out[1].window_drop - 0.4).abs() < 1e-12);
        assert!((out[2].window_drop - 0.1).abs() < 1e-12);
    }
}
