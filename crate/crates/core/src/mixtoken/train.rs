use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use wristgest_nn::optim::{exponential_lr, AdamW, AdamWConfig};
use wristgest_nn::{Graph, Mode, Scalar};

use super::model::MixTokenModel;
use super::prepare::PreparedWindow;
use crate::error::{invalid, Result};
use crate::evaluation::macro_f1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    /// Decoupled weight decay.
    pub weight_decay: f64,
    /// Per-epoch learning-rate decay factor.
    pub lr_gamma: f64,
    /// Elementwise gradient clip value.
    pub grad_clip: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub class_weighting: bool,
    /// Add the mean of the three per-head losses to the fused loss.
    pub aux_loss: bool,
    pub precision: Precision,
    /// Windows per forward pass during evaluation.
    pub eval_chunk: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 1e-3,
            lr_gamma: 0.97,
            grad_clip: 1.0,
            batch_size: 16,
            max_epochs: 100,
            patience: 5,
            seed: 42,
            class_weighting: true,
            aux_loss: false,
            precision: Precision::F32,
            eval_chunk: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.lr, self.lr_gamma, self.grad_clip];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) || self.weight_decay < 0.0 {
            return invalid("lr, lr_gamma and grad_clip must be positive; weight_decay non-negative");
        }
        if self.batch_size == 0 || self.patience == 0 || self.eval_chunk == 0 {
            return invalid("batch_size, patience and eval_chunk must be at least 1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_macro_f1: f64,
    /// Fusion weights at the end of the epoch.
    pub pi: [f64; 3],
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

impl History {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.best_epoch.and_then(|e| self.epochs.iter().find(|r| r.epoch == e))
    }

    pub fn pi_trace(&self) -> Vec<[f64; 3]> {
        self.epochs.iter().map(|r| r.pi).collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Train and select on the CNN head alone (statistical branch removed).
    pub cnn_only: bool,
}

/// Inverse-frequency weights scaled to mean 1 over the classes present;
/// absent classes get weight 0.
pub fn class_weights(labels: &[usize], n_classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        if l < n_classes {
            counts[l] += 1;
        }
    }
    let raw: Vec<f64> = counts
        .iter()
        .map(|&c| if c == 0 { 0.0 } else { 1.0 / c as f64 })
        .collect();
    let present = counts.iter().filter(|&&c| c > 0).count();
    let mean = raw.iter().sum::<f64>() / present.max(1) as f64;
    raw.iter().map(|w| if mean > 0.0 { w / mean } else { 0.0 }).collect()
}

/// Mini-batch AdamW training with per-epoch validation, early stopping on
/// validation macro-F1 and restoration of the best epoch's parameters.
pub fn fit<T: Scalar>(
    model: &mut MixTokenModel<T>,
    train: &[PreparedWindow],
    val: &[PreparedWindow],
    cfg: &TrainConfig,
    opts: FitOptions,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<History> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return invalid("training and validation splits must both be non-empty");
    }
    let mut history = History::default();
    if cfg.max_epochs == 0 {
        return Ok(history);
    }
    let k = model.config.n_classes;
    let labels: Vec<usize> = train.iter().map(|w| w.label).collect();
    let weights = if cfg.class_weighting {
        class_weights(&labels, k)
    } else {
        vec![1.0; k]
    };
    let val_truth: Vec<usize> = val.iter().map(|w| w.label).collect();
    let mut opt = AdamW::new(
        &model.store,
        AdamWConfig {
            weight_decay: cfg.weight_decay,
            clip: Some(cfg.grad_clip),
            ..AdamWConfig::default()
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(usize, f64, wristgest_nn::ParamStore<T>)> = None;
    for epoch in 0..cfg.max_epochs {
        let lr = exponential_lr(cfg.lr, cfg.lr_gamma, epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&PreparedWindow> = idx.iter().map(|&i| &train[i]).collect();
            let targets: Vec<usize> = batch.iter().map(|w| w.label).collect();
            let grads = {
                let mut g = Graph::new(&model.store, Mode::Train);
                let out = model.forward(&mut g, &batch, &mut rng, opts.cnn_only)?;
                let mut loss = g.cross_entropy(out.logits, &targets, Some(&weights))?;
                if cfg.aux_loss && !opts.cnn_only {
                    let heads = [out.cnn, out.attn.unwrap(), out.fused.unwrap()];
                    for h in heads {
                        let l = g.cross_entropy(h, &targets, Some(&weights))?;
                        let l = g.scale(l, 1.0 / 3.0);
                        loss = g.add(loss, l)?;
                    }
                }
                loss_sum += g.value(loss).item().as_f64() * batch.len() as f64;
                g.backward(loss)?.into_param_grads(&model.store)
            };
            opt.step(&mut model.store, &grads, lr)?;
        }
        let preds = model.predict(val, cfg.eval_chunk, opts.cnn_only)?;
        let f1 = macro_f1(&preds, &val_truth, k)?;
        let rec = EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / train.len() as f64,
            val_macro_f1: f1,
            pi: model.fusion_weights(),
        };
        on_epoch(&rec);
        history.epochs.push(rec);
        if best.as_ref().is_none_or(|(_, b, _)| f1 > *b) {
            best = Some((epoch, f1, model.store.clone()));
        }
        let best_epoch = best.as_ref().map_or(0, |b| b.0);
        if epoch - best_epoch >= cfg.patience {
            history.stopped_early = true;
            break;
        }
    }
    if let Some((epoch, _, store)) = best {
        model.store = store;
        history.best_epoch = Some(epoch);
    }
    Ok(history)
}
