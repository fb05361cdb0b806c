mod commands;
mod log;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (", env!("WRISTGEST_GIT_DESCRIBE"), ")");

#[derive(Parser, Debug)]
#[command(
    name = "wristgest",
    version = VERSION,
    about = "Wrist IMU gesture recognition pipeline",
    after_help = "Any configuration field can be overridden with a dotted flag, e.g. --train.lr 0.001 or --model.dropout=0.2."
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// JSON run configuration; missing fields take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed applied to every stage.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for window-parallel stages (1 is fully deterministic).
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Suppress informational log lines.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the synthetic dataset.
    Synth(SynthArgs),
    /// Cut gesture segments out of a continuous stream.
    Segment(SegmentArgs),
    /// Write augmented training clips with a provenance sidecar.
    Augment(AugmentArgs),
    /// Extract statistical feature tokens from windows.
    Featurize(FeaturizeArgs),
    /// Train a Mix-Token model.
    Train(TrainArgs),
    /// Evaluate a checkpoint at window and clip level.
    Eval(EvalArgs),
    /// Feature-group masking ablation.
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub participants: Option<usize>,
    #[arg(long)]
    pub clips_per_class: Option<usize>,
    #[arg(long)]
    pub noise_std: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SegmentArgs {
    /// Stream CSV in the clip layout.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub low: Option<f64>,
    #[arg(long)]
    pub high: Option<f64>,
    #[arg(long)]
    pub smooth: Option<usize>,
    #[arg(long)]
    pub min_dist: Option<usize>,
    #[arg(long)]
    pub min_height: Option<f64>,
    #[arg(long)]
    pub halfwidth: Option<usize>,
}

#[derive(Args, Debug)]
pub struct AugmentArgs {
    /// Dataset index; only its training clips are augmented.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    pub scale_range: Option<Vec<f64>>,
    #[arg(long)]
    pub warp_strength: Option<f64>,
    #[arg(long)]
    pub noise_amp: Option<f64>,
    #[arg(long)]
    pub noise_cutoff_hz: Option<f64>,
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    pub alpha_range: Option<Vec<f64>>,
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    pub beta_range: Option<Vec<f64>>,
    #[arg(long)]
    pub mirror: Option<bool>,
    #[arg(long)]
    pub n_perturb: Option<usize>,
    #[arg(long)]
    pub n_overlay: Option<usize>,
    #[arg(long)]
    pub walk_segment_len: Option<usize>,
}

#[derive(Args, Debug)]
pub struct FeaturizeArgs {
    /// A clip CSV or a dataset index.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Feature group to zero: time, frequency, cross or shape.
    #[arg(long = "mask")]
    pub masks: Vec<String>,
    #[arg(long)]
    pub k_top: Option<usize>,
    /// Restrict an index input to one split.
    #[arg(long)]
    pub split: Option<String>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset index (or dataset directory holding index.json).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "json,csv,svg")]
    pub format: String,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Mask to compare against the baseline; repeatable. Defaults to every
    /// single group plus the transformer-removed variant.
    #[arg(long = "mask")]
    pub masks: Vec<String>,
    /// retrain or reevaluate.
    #[arg(long, default_value = "retrain")]
    pub mode: String,
}

/// Splits `--section.field value` and `--section.field=value` pairs out of
/// the argument list.
pub fn extract_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>), String> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let Some(body) = a.strip_prefix("--") else {
            rest.push(a);
            continue;
        };
        let key = body.split('=').next().unwrap_or_default();
        if !key.contains('.') {
            rest.push(a);
            continue;
        }
        match body.split_once('=') {
            Some((k, v)) => overrides.push((k.to_string(), v.to_string())),
            None => match it.next() {
                Some(v) => overrides.push((key.to_string(), v)),
                None => return Err(format!("override --{key} needs a value")),
            },
        }
    }
    Ok((rest, overrides))
}

fn main() -> ExitCode {
    let (args, overrides) = match extract_overrides(std::env::args().collect()) {
        Ok(v) => v,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let logger = log::Logger::new(cli.global.quiet);
    match commands::run(&cli, &overrides, &logger) {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::Failure::Usage(msg)) => {
            logger.error("usage", &msg);
            ExitCode::from(2)
        }
        Err(commands::Failure::Runtime(e)) => {
            logger.error("failed", &format!("{e:#}"));
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn dotted_flags_are_pulled_out() {
        let (rest, ov) =
            extract_overrides(s(&["wg", "train", "--train.lr", "0.01", "--out", "d", "--model.dropout=0.2"])).unwrap();
        assert_eq!(rest, s(&["wg", "train", "--out", "d"]));
        assert_eq!(
            ov,
            vec![("train.lr".into(), "0.01".into()), ("model.dropout".into(), "0.2".into())]
        );
        assert!(extract_overrides(s(&["wg", "--train.lr"])).is_err());
    }
}
