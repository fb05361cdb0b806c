//! End-to-end wiring: dataset index to normalized windows, model inputs,
//! training, evaluation and ablation.

use serde::{Deserialize, Serialize};
use wristgest_nn::Scalar;

use crate::augmentation::expand_training_set;
use crate::config::RunConfig;
use crate::dataio::{load_walk_bank, DatasetIndex, Split};
use crate::domain::{apply_norm, fit_norm_stats, NormStats, Window, BENCHMARK_NAMES};
use crate::error::{invalid, Result};
use crate::evaluation::{clip_metrics, default_class_names, window_metrics, EvalReport, WindowPrediction};
use crate::features::FeatureMasks;
use crate::mixtoken::{
    ablate_features, fit, AblationMask, AblationMode, AblationOutcome, EpochRecord, FitOptions, History,
    MixTokenConfig, MixTokenModel, PreparedWindow, Preparer, TrainConfig,
};
use crate::segmentation::window_clip;

/// Normalized windows of every split plus the training statistics used.
#[derive(Clone, Debug)]
pub struct SplitWindows {
    pub train: Vec<Window>,
    pub val: Vec<Window>,
    pub test: Vec<Window>,
    pub norm: NormStats,
}

impl SplitWindows {
    pub fn get(&self, split: Split) -> &[Window] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

fn window_split(index: &DatasetIndex, split: Split, cfg: &RunConfig) -> Result<Vec<Window>> {
    let mut out = Vec::new();
    for e in index.clips_in(split) {
        let clip = index.load_clip(e)?;
        out.extend(window_clip(&clip, e.clip_ref(), cfg.data.window_len, cfg.data.stride)?);
    }
    Ok(out)
}

/// Windows one held-out split and normalizes it with training statistics.
pub fn split_windows(index: &DatasetIndex, split: Split, cfg: &RunConfig, norm: &NormStats) -> Result<Vec<Window>> {
    let cfg = cfg.resolved();
    let ws = window_split(index, split, &cfg)?;
    if ws.is_empty() {
        return invalid(format!("the index has no {split:?} clips"));
    }
    ws.iter().map(|w| apply_norm(w, norm)).collect()
}

/// Windows raw (un-normalized) validation and test clips, augments and
/// windows the training clips, then normalizes everything with statistics
/// fitted on the augmented training windows.
pub fn build_windows(index: &DatasetIndex, cfg: &RunConfig) -> Result<SplitWindows> {
    let cfg = cfg.resolved();
    let entries: Vec<_> = index.clips_in(Split::Train).collect();
    if entries.is_empty() {
        return invalid("the index has no training clips; run make_splits first");
    }
    let clips = entries
        .iter()
        .map(|e| Ok((index.load_clip(e)?, Split::Train)))
        .collect::<Result<Vec<_>>>()?;
    let bank = if cfg.augmentation.n_overlay > 0 {
        Some(load_walk_bank(index, cfg.augmentation.walk_segment_len)?)
    } else {
        None
    };
    let expanded = expand_training_set(&clips, &cfg.augmentation, bank.as_ref())?;
    let mut train = Vec::new();
    for (i, (clip, prov)) in expanded.iter().enumerate() {
        let clip_ref = format!("{}#{i}", entries[prov.source].clip_ref());
        train.extend(window_clip(clip, &clip_ref, cfg.data.window_len, cfg.data.stride)?);
    }
    let val = window_split(index, Split::Val, &cfg)?;
    let test = window_split(index, Split::Test, &cfg)?;
    let norm = fit_norm_stats(&train)?;
    let normalize = |ws: Vec<Window>| ws.iter().map(|w| apply_norm(w, &norm)).collect::<Result<Vec<_>>>();
    Ok(SplitWindows {
        train: normalize(train)?,
        val: normalize(val)?,
        test: normalize(test)?,
        norm,
    })
}

#[derive(Clone, Debug)]
pub struct PreparedSplits {
    pub train: Vec<PreparedWindow>,
    pub val: Vec<PreparedWindow>,
    pub test: Vec<PreparedWindow>,
}

pub fn prepare_splits(windows: &SplitWindows, model: &MixTokenConfig, masks: FeatureMasks) -> Result<PreparedSplits> {
    let mut p = Preparer::new(model, masks)?;
    Ok(PreparedSplits {
        train: p.prepare_all(&windows.train)?,
        val: p.prepare_all(&windows.val)?,
        test: p.prepare_all(&windows.test)?,
    })
}

pub fn class_names(n_classes: usize) -> Vec<String> {
    if n_classes == BENCHMARK_NAMES.len() {
        BENCHMARK_NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        default_class_names(n_classes)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub window: EvalReport,
    pub clip: EvalReport,
    pub predictions: Vec<WindowPrediction>,
}

pub fn evaluate<T: Scalar>(
    model: &MixTokenModel<T>,
    windows: &[PreparedWindow],
    k: usize,
    chunk: usize,
    cnn_only: bool,
) -> Result<EvalOutcome> {
    let preds = model.predict(windows, chunk, cnn_only)?;
    let truths: Vec<usize> = windows.iter().map(|w| w.label).collect();
    let names = class_names(model.config.n_classes);
    let window = window_metrics(&preds, &truths, &names)?;
    let predictions: Vec<WindowPrediction> = windows
        .iter()
        .zip(&preds)
        .map(|(w, &p)| WindowPrediction {
            clip_ref: w.clip_ref.clone(),
            start_index: w.start_index,
            pred: p,
            truth: w.label,
        })
        .collect();
    let clip = clip_metrics(&predictions, k, &names)?;
    Ok(EvalOutcome {
        window,
        clip,
        predictions,
    })
}

pub fn train_model<T: Scalar>(
    prepared: &PreparedSplits,
    model_cfg: &MixTokenConfig,
    train_cfg: &TrainConfig,
    opts: FitOptions,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<(MixTokenModel<T>, History)> {
    let mut model = MixTokenModel::<T>::new(model_cfg.clone())?;
    let history = fit(&mut model, &prepared.train, &prepared.val, train_cfg, opts, on_epoch)?;
    Ok((model, history))
}

/// Feature-group ablation on prepared windows. In retrain mode every mask
/// gets a freshly trained model (same seeds); in re-evaluate mode the
/// baseline model is trained once and only the test inputs are masked.
pub fn run_ablation<T: Scalar>(
    windows: &SplitWindows,
    cfg: &RunConfig,
    masks: &[AblationMask],
    mode: AblationMode,
    mut on_epoch: impl FnMut(AblationMask, &EpochRecord),
) -> Result<Vec<AblationOutcome>> {
    let cfg = cfg.resolved();
    let (k, chunk) = (cfg.eval.k, cfg.train.eval_chunk);
    let eval_split = cfg.eval.split;
    let pick = |p: &PreparedSplits| -> Vec<PreparedWindow> {
        match eval_split {
            Split::Train => p.train.clone(),
            Split::Val => p.val.clone(),
            Split::Test => p.test.clone(),
        }
    };
    match mode {
        AblationMode::Retrain => ablate_features(masks, |m| {
            let prepared = prepare_splits(windows, &cfg.model, m.feature_masks())?;
            let opts = FitOptions { cnn_only: m.cnn_only() };
            let (model, _) = train_model::<T>(&prepared, &cfg.model, &cfg.train, opts, |r| on_epoch(m, r))?;
            let out = evaluate(&model, &pick(&prepared), k, chunk, m.cnn_only())?;
            Ok((out.window.macro_f1, out.clip.macro_f1))
        }),
        AblationMode::Reevaluate => {
            let prepared = prepare_splits(windows, &cfg.model, FeatureMasks::NONE)?;
            let (model, _) = train_model::<T>(&prepared, &cfg.model, &cfg.train, FitOptions::default(), |r| {
                on_epoch(AblationMask::None, r)
            })?;
            ablate_features(masks, |m| {
                let eval_windows = if m.feature_masks() == FeatureMasks::NONE {
                    pick(&prepared)
                } else {
                    let mut p = Preparer::new(&cfg.model, m.feature_masks())?;
                    p.prepare_all(windows.get(eval_split))?
                };
                let out = evaluate(&model, &eval_windows, k, chunk, m.cnn_only())?;
                Ok((out.window.macro_f1, out.clip.macro_f1))
            })
        }
    }
}
