//! `fome`: batch front end for preprocessing, pre-training, fine-tuning and
//! evaluation.

mod commands;
mod data;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fome::model::Ablation;
use fome::train::{FinetuneMode, MaskMode};
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "fome", version, about = "EEG foundation-model toolkit")]
struct Cli {
    /// Worker threads for per-sample gradients.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Where to write the run manifest (`-` for stderr).
    #[arg(long, global = true)]
    run_manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic multi-tone recording.
    Synth(SynthArgs),
    /// Filter, resample, standardize and patch a recording.
    Preprocess(PreprocessArgs),
    /// Per-patch band powers as CSV.
    Spectra(SpectraArgs),
    /// Masked-patch self-supervised pre-training.
    Pretrain(PretrainArgs),
    /// Train a task head on a labeled manifest.
    #[command(subcommand)]
    Finetune(FinetuneTask),
    /// Score predictions against a labeled manifest.
    Eval(EvalArgs),
    /// List checkpoint parameters and check them against the model config.
    InspectCheckpoint(InspectArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FileFormat {
    Binary,
    Csv,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TaperArg {
    None,
    Hann,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ScaleArg {
    D,
    Dk,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DtypeArg {
    F32,
    F64,
}

/// A tone `FREQ:AMP[:CH[:PHASE]]`; without a channel it goes on every channel.
#[derive(Clone, Debug)]
struct Tone {
    frequency_hz: f64,
    amplitude: f64,
    channel: Option<usize>,
    phase_rad: f64,
}

fn parse_tone(s: &str) -> Result<Tone, String> {
    let parts: Vec<&str> = s.split(':').collect();
    if !(2..=4).contains(&parts.len()) {
        return Err(format!("expected FREQ:AMP[:CH[:PHASE]], got `{s}`"));
    }
    let num = |v: &str| v.parse::<f64>().map_err(|_| format!("bad number `{v}` in tone `{s}`"));
    Ok(Tone {
        frequency_hz: num(parts[0])?,
        amplitude: num(parts[1])?,
        channel: match parts.get(2) {
            Some(c) => Some(c.parse().map_err(|_| format!("bad channel `{c}` in tone `{s}`"))?),
            None => None,
        },
        phase_rad: parts.get(3).map(|p| num(p)).transpose()?.unwrap_or(0.0),
    })
}

fn parse_band(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(':').ok_or_else(|| format!("expected LO:HI, got `{s}`"))?;
    let num = |v: &str| v.parse::<f64>().map_err(|_| format!("bad number `{v}`"));
    Ok((num(lo)?, num(hi)?))
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 2)]
    channels: usize,
    #[arg(long, default_value_t = 60.0)]
    seconds: f64,
    #[arg(long, default_value_t = 250.0)]
    rate: f64,
    /// `FREQ:AMP[:CH[:PHASE]]`, repeatable.
    #[arg(long = "tone", value_parser = parse_tone)]
    tones: Vec<Tone>,
    /// Standard deviation of additive white noise.
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "-")]
    out: String,
    /// Defaults to CSV for a `.csv` path, FEEG binary otherwise.
    #[arg(long)]
    format: Option<FileFormat>,
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    /// FEEG binary or CSV recording; `-` reads stdin.
    #[arg(long = "in", default_value = "-")]
    input: String,
    #[arg(long, default_value = "-")]
    out: String,
    /// Mains frequency, 50 or 60.
    #[arg(long, default_value_t = 50.0)]
    notch: f64,
    #[arg(long, default_value = "0.5:100.5", value_parser = parse_band)]
    band: (f64, f64),
    #[arg(long, default_value_t = 250.0)]
    rate: f64,
    /// Window length in samples at the target rate.
    #[arg(long, default_value_t = 1500)]
    window: usize,
    /// Patch length in samples; defaults to the window length.
    #[arg(long)]
    patch_len: Option<usize>,
}

#[derive(Args, Debug)]
struct SpectraArgs {
    #[arg(long = "in", default_value = "-")]
    input: String,
    #[arg(long, default_value = "-")]
    out: String,
    #[arg(long, value_enum, default_value_t = TaperArg::None)]
    taper: TaperArg,
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// tiny, base or large.
    #[arg(long, default_value = "tiny")]
    preset: String,
    /// `key=value` model config; overrides the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Attention score divisor: √D or √D_k.
    #[arg(long, value_enum)]
    scale: Option<ScaleArg>,
    /// freq, temporal, channel or conv-embed; repeatable.
    #[arg(long = "ablate")]
    ablate: Vec<Ablation>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Optimizer steps; the schedule is compressed to fit.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value_t = 0.40)]
    mask_ratio: f64,
    /// Reconstruction loss over every slot instead of masked slots only.
    #[arg(long)]
    loss_all: bool,
    #[arg(long, default_value = "slot")]
    mask_mode: MaskMode,
    /// Peak learning rate.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, default_value_t = 12)]
    batch_size: usize,
    #[arg(long, default_value_t = 4)]
    grad_accum: usize,
    #[arg(long, default_value_t = 15)]
    patches_per_sample: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checkpoint cadence in optimizer steps; 0 disables.
    #[arg(long, default_value_t = 500)]
    checkpoint_every: usize,
    /// Validation cadence in optimizer steps; 0 evaluates once at the end.
    #[arg(long, default_value_t = 500)]
    eval_every: usize,
    #[arg(long, value_enum, default_value_t = DtypeArg::F64)]
    dtype: DtypeArg,
}

#[derive(Args, Debug)]
struct PretrainArgs {
    /// Patch-grid files; `-` reads grids from stdin. Repeatable.
    #[arg(long = "in", default_value = "-")]
    inputs: Vec<String>,
    /// Checkpoint path; the config goes to `<out>.cfg`.
    #[arg(long)]
    out: PathBuf,
    /// Loss trace CSV; defaults to `<out>.loss.csv`.
    #[arg(long)]
    loss_csv: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args, Debug)]
struct FinetuneCommon {
    /// CSV with columns `path,label,split`; paths are relative to it.
    #[arg(long)]
    manifest: PathBuf,
    /// Pre-trained checkpoint with its `.cfg` sidecar.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Metrics JSON; defaults to `<out>.metrics.json`.
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[arg(long)]
    loss_csv: Option<PathBuf>,
    #[arg(long, default_value = "full")]
    mode: FinetuneMode,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Subcommand, Debug)]
enum FinetuneTask {
    Classify {
        #[command(flatten)]
        common: FinetuneCommon,
        /// Number of classes; defaults to the largest label plus one.
        #[arg(long)]
        classes: Option<usize>,
    },
    Forecast {
        #[command(flatten)]
        common: FinetuneCommon,
        /// Input patches.
        #[arg(long, default_value_t = 5)]
        context: usize,
        /// Patches to predict.
        #[arg(long, default_value_t = 2)]
        horizon: usize,
    },
    Impute {
        #[command(flatten)]
        common: FinetuneCommon,
        /// Fraction of patches hidden in each sample.
        #[arg(long, default_value_t = 0.40)]
        missing_ratio: f64,
    },
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Ground-truth manifest `path,label,split`.
    #[arg(long)]
    manifest: PathBuf,
    /// Predictions CSV `path,pred`, joined on `path`.
    #[arg(long, conflicts_with = "checkpoint", required_unless_present = "checkpoint")]
    preds: Option<PathBuf>,
    /// Classifier checkpoint to predict with.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Only rows of this split.
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long, default_value_t = 15)]
    patches_per_sample: usize,
    /// Metrics JSON.
    #[arg(long, default_value = "-")]
    out: String,
    /// Per-file predictions CSV, when predicting from a checkpoint.
    #[arg(long)]
    preds_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InspectArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Model config; defaults to `<in>.cfg` when present.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "-")]
    out: String,
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    if let Some(f) = e.downcast_ref::<fome::Error>() {
        f.kind()
    } else if e.downcast_ref::<std::io::Error>().is_some() {
        "IoError"
    } else if e.downcast_ref::<csv::Error>().is_some() || e.downcast_ref::<serde_json::Error>().is_some() {
        "FormatError"
    } else {
        "Error"
    }
}

fn report(kind: &str, message: &str) {
    eprintln!("{}", json!({ "error": kind, "message": message }));
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    ExitCode::SUCCESS
                }
                _ => {
                    report("UsageError", e.render().to_string().trim());
                    ExitCode::from(2)
                }
            };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FOME_LOG", "warn")).init();
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(error_kind(&e), &format!("{e:#}"));
            ExitCode::from(1)
        }
    }
}
