use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use wristgest::augmentation::expand_training_set;
use wristgest::config::RunConfig;
use wristgest::dataio::{
    generate_synth, load_dataset, load_walk_bank, make_splits, read_clip_csv, write_clip_csv, ClipEntry,
    DatasetIndex, Split, SynthSpec, INDEX_FILE,
};
use wristgest::domain::{ChannelLayout, Condition, GestureLabel, NormStats, SensorClip, Window, Wrist};
use wristgest::evaluation::{emit_report, fusion_svg, ReportFormat};
use wristgest::features::{tokenize, FeatureMasks, SpectrumPlanner};
use wristgest::mixtoken::{
    AblationMask, AblationMode, AblationOutcome, FitOptions, History, MixTokenConfig, MixTokenModel, Precision,
    PreparedWindow, Preparer,
};
use wristgest::pipeline::{build_windows, evaluate, split_windows, train_model, EvalOutcome, PreparedSplits};
use wristgest::segmentation::{segment_stream, window_clip};
use wristgest_nn::checkpoint::{load_checkpoint, save_checkpoint};
use wristgest_nn::Scalar;

use crate::log::Logger;
use crate::{AblateArgs, AugmentArgs, Cli, Command, EvalArgs, FeaturizeArgs, SegmentArgs, SynthArgs, TrainArgs};

pub const CHECKPOINT_FILE: &str = "model.ckpt";

pub enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

fn usage<T>(msg: impl std::fmt::Display) -> Outcome<T> {
    Err(Failure::Usage(msg.to_string()))
}

struct Ctx<'a> {
    cli: &'a Cli,
    overrides: &'a [(String, String)],
    log: &'a Logger,
}

impl Ctx<'_> {
    /// Defaults, then `--config`, then `--seed`, then dotted overrides.
    fn config(&self) -> Outcome<RunConfig> {
        let mut cfg = match &self.cli.global.config {
            Some(p) => RunConfig::from_file(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.cli.global.seed {
            cfg.seed = Some(s);
        }
        let cfg = cfg
            .with_overrides(self.overrides.iter().map(|(k, v)| (k.as_str(), v.as_str())))
            .map_err(|e| Failure::Usage(e.to_string()))?;
        cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
        Ok(cfg.resolved())
    }

    fn no_overrides(&self, cmd: &str) -> Outcome {
        if let Some((k, _)) = self.overrides.first() {
            return usage(format!("{cmd} takes no configuration overrides (got --{k})"));
        }
        Ok(())
    }

    fn run_record(&self, out: &Path, cfg: &RunConfig) -> Outcome {
        cfg.write(&out.join("config.json"))?;
        let record = json!({
            "version": format!("{} {}", env!("CARGO_PKG_NAME"), crate::VERSION),
            "seed": cfg.seed,
            "args": std::env::args().skip(1).collect::<Vec<_>>(),
            "threads": self.cli.global.threads,
        });
        write_json(&out.join("run.json"), &record)
    }
}

pub fn run(cli: &Cli, overrides: &[(String, String)], log: &Logger) -> Outcome {
    if cli.global.threads == 0 {
        return usage("--threads must be at least 1");
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.global.threads)
        .build_global()
        .map_err(|e| anyhow!("thread pool: {e}"))?;
    let ctx = Ctx { cli, overrides, log };
    match &cli.command {
        Command::Synth(a) => synth(&ctx, a),
        Command::Segment(a) => segment(&ctx, a),
        Command::Augment(a) => augment(&ctx, a),
        Command::Featurize(a) => featurize(&ctx, a),
        Command::Train(a) => train(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::Ablate(a) => ablate(&ctx, a),
    }
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Outcome {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn create_dir(path: &Path) -> Outcome {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(())
}

/// Accepts an index file, a directory holding one, or a raw dataset tree
/// (split on the fly).
fn open_dataset(path: &Path, cfg: &RunConfig) -> Outcome<DatasetIndex> {
    if path.is_file() {
        return Ok(DatasetIndex::read(path)?);
    }
    let index_path = path.join(INDEX_FILE);
    if index_path.is_file() {
        return Ok(DatasetIndex::read(&index_path)?);
    }
    if !path.is_dir() {
        return Err(anyhow!("{} is neither a dataset directory nor an index", path.display()).into());
    }
    let idx = load_dataset(path)?;
    Ok(make_splits(&idx, cfg.data.split_ratios, cfg.data.split_seed)?)
}

fn parse_split(s: &str) -> Outcome<Split> {
    Split::parse(s).map_or_else(|| usage(format!("unknown split {s:?}")), Ok)
}

/// Prepares windows in contiguous chunks, one preparer per worker; the
/// output order matches the input order.
fn prepare_parallel(cfg: &MixTokenConfig, masks: FeatureMasks, windows: &[Window], threads: usize) -> Outcome<Vec<PreparedWindow>> {
    if windows.is_empty() {
        return Ok(Vec::new());
    }
    let chunk = windows.len().div_ceil(threads.max(1));
    let parts = windows
        .par_chunks(chunk)
        .map(|ws| Preparer::new(cfg, masks)?.prepare_all(ws))
        .collect::<wristgest::Result<Vec<_>>>()?;
    Ok(parts.into_iter().flatten().collect())
}

fn synth(ctx: &Ctx, a: &SynthArgs) -> Outcome {
    ctx.no_overrides("synth")?;
    let mut spec = SynthSpec::default();
    if let Some(s) = ctx.cli.global.seed {
        spec.seed = s;
    }
    if let Some(n) = a.participants {
        spec.n_participants = n;
    }
    if let Some(n) = a.clips_per_class {
        spec.n_clips_per_class = n;
    }
    if let Some(s) = a.noise_std {
        spec.noise_std = s;
    }
    spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let idx = generate_synth(&spec, &a.out)?;
    write_json(&a.out.join("synth_spec.json"), &spec)?;
    ctx.log.info(
        "synth",
        json!({ "out": a.out, "clips": idx.clips.len(), "participants": idx.participants().len(), "seed": spec.seed }),
    );
    Ok(())
}

fn segment(ctx: &Ctx, a: &SegmentArgs) -> Outcome {
    let mut cfg = ctx.config()?.segmentation;
    if let Some(v) = a.low {
        cfg.bandpass_low_hz = v;
    }
    if let Some(v) = a.high {
        cfg.bandpass_high_hz = v;
    }
    if let Some(v) = a.smooth {
        cfg.smooth_window = v;
    }
    if let Some(v) = a.min_dist {
        cfg.peak_min_distance = v;
    }
    if a.min_height.is_some() {
        cfg.peak_min_height = a.min_height;
    }
    if let Some(v) = a.halfwidth {
        cfg.segment_halfwidth = v;
    }
    let rate = ctx.config()?.model.sample_rate_hz;
    cfg.validate(rate).map_err(|e| Failure::Usage(e.to_string()))?;
    let samples = read_clip_csv(&a.input)?;
    // Streams carry no gesture label; segments get a non-benchmark class id.
    let stream = SensorClip::new(
        samples,
        ChannelLayout::canonical(rate),
        GestureLabel::new(NEGATIVE_PLACEHOLDER)?,
        String::from("stream"),
        Condition::Sitting,
        Wrist::Unspecified,
    )?;
    let (centers, segments) = segment_stream(&stream, &cfg)?;
    create_dir(&a.out)?;
    let mut files = Vec::with_capacity(segments.len());
    for (i, s) in segments.iter().enumerate() {
        let name = format!("segment_{i:04}.csv");
        write_clip_csv(&a.out.join(&name), &s.samples, rate)?;
        files.push(name);
    }
    write_json(
        &a.out.join("centers.json"),
        &json!({ "centers": centers, "halfwidth": cfg.segment_halfwidth, "files": files, "config": cfg }),
    )?;
    ctx.log.info("segment", json!({ "segments": segments.len(), "out": a.out }));
    Ok(())
}

const NEGATIVE_PLACEHOLDER: u8 = 27;

fn augment(ctx: &Ctx, a: &AugmentArgs) -> Outcome {
    let cfg = ctx.config()?;
    let mut aug = cfg.augmentation.clone();
    let pair = |v: &Option<Vec<f64>>, dst: &mut (f64, f64)| {
        if let Some(v) = v {
            *dst = (v[0], v[1]);
        }
    };
    pair(&a.scale_range, &mut aug.scale_range);
    pair(&a.alpha_range, &mut aug.alpha_range);
    pair(&a.beta_range, &mut aug.beta_range);
    if let Some(v) = a.warp_strength {
        aug.warp_strength = v;
    }
    if let Some(v) = a.noise_amp {
        aug.noise_amp = v;
    }
    if let Some(v) = a.noise_cutoff_hz {
        aug.noise_cutoff_hz = v;
    }
    if let Some(v) = a.mirror {
        aug.mirror = v;
    }
    if let Some(v) = a.n_perturb {
        aug.n_perturb = v;
    }
    if let Some(v) = a.n_overlay {
        aug.n_overlay = v;
    }
    if let Some(v) = a.walk_segment_len {
        aug.walk_segment_len = v;
    }
    aug.validate().map_err(|e| Failure::Usage(e.to_string()))?;

    let index = open_dataset(&a.data, &cfg)?;
    let entries: Vec<&ClipEntry> = index.clips_in(Split::Train).collect();
    if entries.is_empty() {
        return Err(anyhow!("{} has no training clips", a.data.display()).into());
    }
    let clips = entries
        .iter()
        .map(|e| Ok((index.load_clip(e)?, Split::Train)))
        .collect::<wristgest::Result<Vec<_>>>()?;
    let bank = if aug.n_overlay > 0 {
        Some(load_walk_bank(&index, aug.walk_segment_len)?)
    } else {
        None
    };
    let expanded = expand_training_set(&clips, &aug, bank.as_ref())?;

    create_dir(&a.out)?;
    let mut out_entries = Vec::with_capacity(expanded.len());
    let mut provenance = Vec::with_capacity(expanded.len());
    let mut wrists: BTreeMap<String, Wrist> = BTreeMap::new();
    for (i, (clip, prov)) in expanded.iter().enumerate() {
        let src = entries[prov.source];
        let path = format!(
            "{}/{}/{}_{}.csv",
            clip.participant_id,
            clip.condition.as_str(),
            clip.label.class_id,
            i
        );
        write_clip_csv(&a.out.join(&path), &clip.samples, index.sample_rate_hz)?;
        wrists.insert(clip.participant_id.clone(), clip.wrist);
        out_entries.push(ClipEntry {
            path: path.clone(),
            participant_id: clip.participant_id.clone(),
            condition: clip.condition,
            class_id: clip.label.class_id,
            clip_idx: i as u32,
            wrist: clip.wrist,
            split: Some(Split::Train),
        });
        provenance.push(json!({
            "path": path,
            "source": src.path,
            "transforms": prov.transforms,
            "perturb": prov.perturb,
            "overlay": prov.overlay,
        }));
    }
    for (pid, wrist) in &wrists {
        let dir = a.out.join(pid);
        write_json(&dir.join("meta.json"), &json!({ "wrist": wrist }))?;
    }
    let out_index = DatasetIndex {
        root: a.out.clone(),
        sample_rate_hz: index.sample_rate_hz,
        clips: out_entries,
    };
    out_index.write(&a.out.join(INDEX_FILE))?;
    write_json(&a.out.join("provenance.json"), &provenance)?;
    write_json(&a.out.join("augmentation.json"), &aug)?;
    ctx.log.info("augment", json!({ "sources": entries.len(), "clips": expanded.len(), "out": a.out }));
    Ok(())
}

#[derive(Serialize)]
struct FeatureRecord<'a> {
    clip_ref: &'a str,
    start_index: usize,
    label: u8,
    tokens: wristgest::features::FeatureTokenSequence,
}

fn featurize(ctx: &Ctx, a: &FeaturizeArgs) -> Outcome {
    let mut cfg = ctx.config()?;
    if let Some(k) = a.k_top {
        cfg.features.k_top = k;
    }
    let mut masks = FeatureMasks::NONE;
    for m in &a.masks {
        masks.set(m).map_err(|e| Failure::Usage(e.to_string()))?;
    }
    let (w, stride) = (cfg.data.window_len, cfg.data.stride);
    let is_csv = a.input.extension().is_some_and(|x| x == "csv");
    let (windows, rate): (Vec<Window>, f64) = if is_csv {
        let rate = cfg.model.sample_rate_hz;
        let clip = SensorClip::new(
            read_clip_csv(&a.input)?,
            ChannelLayout::canonical(rate),
            GestureLabel::new(NEGATIVE_PLACEHOLDER)?,
            String::from("input"),
            Condition::Sitting,
            Wrist::Unspecified,
        )?;
        (window_clip(&clip, &a.input.display().to_string(), w, stride)?, rate)
    } else {
        let index = open_dataset(&a.input, &cfg)?;
        let split = a.split.as_deref().map(parse_split).transpose()?;
        let mut ws = Vec::new();
        for e in index.clips.iter().filter(|e| split.is_none() || e.split == split) {
            ws.extend(window_clip(&index.load_clip(e)?, e.clip_ref(), w, stride)?);
        }
        (ws, index.sample_rate_hz)
    };
    let chunk = windows.len().div_ceil(ctx.cli.global.threads).max(1);
    let token_sets = windows
        .par_chunks(chunk)
        .map(|ws| {
            let mut planner = SpectrumPlanner::new();
            ws.iter()
                .map(|w| tokenize(w, &cfg.features, masks, rate, &mut planner))
                .collect::<wristgest::Result<Vec<_>>>()
        })
        .collect::<wristgest::Result<Vec<_>>>()?;
    let records: Vec<FeatureRecord> = windows
        .iter()
        .zip(token_sets.into_iter().flatten())
        .map(|(w, tokens)| FeatureRecord {
            clip_ref: &w.clip_ref,
            start_index: w.start_index,
            label: w.label.benchmark_id,
            tokens,
        })
        .collect();
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_json(&a.out, &records)?;
    ctx.log.info("featurize", json!({ "windows": records.len(), "out": a.out }));
    Ok(())
}

fn train(ctx: &Ctx, a: &TrainArgs) -> Outcome {
    let cfg = ctx.config()?;
    let index = open_dataset(&a.data, &cfg)?;
    create_dir(&a.out)?;
    ctx.run_record(&a.out, &cfg)?;
    let windows = build_windows(&index, &cfg)?;
    let threads = ctx.cli.global.threads;
    let prepared = PreparedSplits {
        train: prepare_parallel(&cfg.model, FeatureMasks::NONE, &windows.train, threads)?,
        val: prepare_parallel(&cfg.model, FeatureMasks::NONE, &windows.val, threads)?,
        test: Vec::new(),
    };
    ctx.log.info(
        "windows",
        json!({ "train": prepared.train.len(), "val": prepared.val.len(), "test": windows.test.len() }),
    );
    let history = match cfg.train.precision {
        Precision::F32 => fit_and_save::<f32>(ctx, &cfg, &prepared, &a.out)?,
        Precision::F64 => fit_and_save::<f64>(ctx, &cfg, &prepared, &a.out)?,
    };
    write_json(&a.out.join("history.json"), &history)?;
    write_json(&a.out.join("norm.json"), &windows.norm)?;
    fs::write(a.out.join("fusion_weights.svg"), fusion_svg(&history.pi_trace()))?;
    ctx.log.info(
        "trained",
        json!({ "best_epoch": history.best_epoch, "best": history.best(), "stopped_early": history.stopped_early, "out": a.out }),
    );
    Ok(())
}

fn fit_and_save<T: Scalar>(ctx: &Ctx, cfg: &RunConfig, prepared: &PreparedSplits, out: &Path) -> Outcome<History> {
    let (model, history) = train_model::<T>(prepared, &cfg.model, &cfg.train, FitOptions::default(), |r| {
        ctx.log.info("epoch", json!(r))
    })?;
    ctx.log.info("model", json!({ "params": model.num_params() }));
    save_checkpoint(&model.store, &out.join(CHECKPOINT_FILE))?;
    Ok(history)
}

#[derive(Serialize)]
struct Report<'a> {
    split: Split,
    k: usize,
    window: &'a wristgest::evaluation::EvalReport,
    clip: &'a wristgest::evaluation::EvalReport,
    fusion_weights: [f64; 3],
}

fn eval(ctx: &Ctx, a: &EvalArgs) -> Outcome {
    let (ckpt, run_dir) = if a.checkpoint.is_dir() {
        (a.checkpoint.join(CHECKPOINT_FILE), a.checkpoint.clone())
    } else {
        let dir = a.checkpoint.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
        (a.checkpoint.clone(), dir)
    };
    let trained = RunConfig::from_file(&run_dir.join("config.json"))
        .with_context(|| format!("no training config next to {}", ckpt.display()))?;
    let mut cfg = trained
        .with_overrides(ctx.overrides.iter().map(|(k, v)| (k.as_str(), v.as_str())))
        .map_err(|e| Failure::Usage(e.to_string()))?;
    if cfg.model != trained.model {
        return usage("model.* cannot be overridden at evaluation time");
    }
    if let Some(s) = &a.split {
        cfg.eval.split = parse_split(s)?;
    }
    if let Some(k) = a.k {
        cfg.eval.k = k;
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let formats = ReportFormat::parse_list(&a.format).map_err(|e| Failure::Usage(e.to_string()))?;
    let norm_path = run_dir.join("norm.json");
    let norm: NormStats = serde_json::from_str(
        &fs::read_to_string(&norm_path).with_context(|| format!("reading {}", norm_path.display()))?,
    )?;
    let index = open_dataset(&a.data, &cfg)?;
    let windows = split_windows(&index, cfg.eval.split, &cfg, &norm)?;
    let prepared = prepare_parallel(&cfg.model, FeatureMasks::NONE, &windows, ctx.cli.global.threads)?;
    let (outcome, pi) = match cfg.train.precision {
        Precision::F32 => eval_with::<f32>(&cfg, &ckpt, &prepared)?,
        Precision::F64 => eval_with::<f64>(&cfg, &ckpt, &prepared)?,
    };
    create_dir(&a.out)?;
    let trace = fs::read_to_string(run_dir.join("history.json"))
        .ok()
        .and_then(|t| serde_json::from_str::<History>(&t).ok())
        .map(|h| h.pi_trace());
    let non_json: Vec<ReportFormat> = formats.iter().copied().filter(|f| *f != ReportFormat::Json).collect();
    emit_report(&outcome.window, &non_json, &a.out, "window", None)?;
    emit_report(&outcome.clip, &non_json, &a.out, "clip", trace.as_deref())?;
    if formats.contains(&ReportFormat::Json) {
        write_json(
            &a.out.join("report.json"),
            &Report {
                split: cfg.eval.split,
                k: cfg.eval.k,
                window: &outcome.window,
                clip: &outcome.clip,
                fusion_weights: pi,
            },
        )?;
        write_json(&a.out.join("predictions.json"), &outcome.predictions)?;
    }
    ctx.log.info(
        "eval",
        json!({
            "split": cfg.eval.split,
            "windows": prepared.len(),
            "window_macro_f1": outcome.window.macro_f1,
            "clip_macro_f1": outcome.clip.macro_f1,
            "out": a.out,
        }),
    );
    Ok(())
}

fn eval_with<T: Scalar>(cfg: &RunConfig, ckpt: &Path, windows: &[PreparedWindow]) -> Outcome<(EvalOutcome, [f64; 3])> {
    let store = load_checkpoint::<T>(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let model = MixTokenModel::<T>::with_params(cfg.model.clone(), &store)?;
    let out = evaluate(&model, windows, cfg.eval.k, cfg.train.eval_chunk, false)?;
    Ok((out, model.fusion_weights()))
}

fn ablate(ctx: &Ctx, a: &AblateArgs) -> Outcome {
    let cfg = ctx.config()?;
    let mode = AblationMode::parse(&a.mode).map_err(|e| Failure::Usage(e.to_string()))?;
    let masks: Vec<AblationMask> = if a.masks.is_empty() {
        let mut m = AblationMask::SINGLE_GROUPS.to_vec();
        m.push(AblationMask::TransformerRemoved);
        m
    } else {
        a.masks
            .iter()
            .map(|s| AblationMask::parse(s).map_err(|e| Failure::Usage(e.to_string())))
            .collect::<Outcome<_>>()?
    };
    let index = open_dataset(&a.data, &cfg)?;
    create_dir(&a.out)?;
    ctx.run_record(&a.out, &cfg)?;
    let windows = build_windows(&index, &cfg)?;
    let on_epoch = |m: AblationMask, r: &wristgest::mixtoken::EpochRecord| {
        ctx.log.info("epoch", json!({ "mask": m.as_str(), "epoch": r.epoch, "train_loss": r.train_loss, "val_macro_f1": r.val_macro_f1 }))
    };
    let outcomes: Vec<AblationOutcome> = match cfg.train.precision {
        Precision::F32 => wristgest::pipeline::run_ablation::<f32>(&windows, &cfg, &masks, mode, on_epoch)?,
        Precision::F64 => wristgest::pipeline::run_ablation::<f64>(&windows, &cfg, &masks, mode, on_epoch)?,
    };
    write_json(&a.out.join("ablation.json"), &json!({ "mode": a.mode, "split": cfg.eval.split, "results": outcomes }))?;
    let mut csv = String::from("mask,window_macro_f1,clip_macro_f1,window_drop\n");
    for o in &outcomes {
        csv.push_str(&format!("{},{},{},{}\n", o.mask.as_str(), o.window_macro_f1, o.clip_macro_f1, o.window_drop));
    }
    fs::write(a.out.join("ablation.csv"), csv)?;
    for o in &outcomes {
        ctx.log.info(
            "ablation",
            json!({ "mask": o.mask.as_str(), "window_macro_f1": o.window_macro_f1, "clip_macro_f1": o.clip_macro_f1, "window_drop": o.window_drop }),
        );
    }
    Ok(())
}
