mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tar_core::data::FakeKind;
use tar_core::model::Variant;
use tar_core::optim::OptimizerKind;
use tar_core::train::{ActivationSource, Precision};
use tar_core::TarError;

use config::Preset;

/// Deepfake detection with a latent-split residual autoencoder.
#[derive(Parser, Debug)]
#[command(name = "tar", version, about)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// JSON config file; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed; falls back to the config file, then TAR_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 selects the sequential path.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic multi-domain dataset.
    Synth(SynthArgs),
    /// Train a base model on one domain.
    Train(TrainArgs),
    /// Few-shot transfer through a sequence of domains.
    Transfer(TransferArgs),
    /// Accuracy report over test splits.
    Eval(EvalArgs),
    /// Decoder activation heatmap for one image.
    Cam(CamArgs),
    /// Summarize a checkpoint and verify its checksum.
    Inspect(InspectArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Dataset root.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Image size (defaults to the preset's input size).
    #[arg(long)]
    pub size: Option<usize>,
    /// Comma-separated fake domains, or "all".
    #[arg(long)]
    pub domains: Option<String>,
    /// Base-training images per class.
    #[arg(long)]
    pub train: Option<usize>,
    /// Few-shot images per class.
    #[arg(long)]
    pub fewshot: Option<usize>,
    /// Test images per class.
    #[arg(long)]
    pub test: Option<usize>,
}

#[derive(Args, Debug, Default)]
pub struct TrainFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_parser = parse_optimizer)]
    pub optimizer: Option<OptimizerKind>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, value_parser = parse_source)]
    pub activation_source: Option<ActivationSource>,
    #[arg(long, value_parser = parse_precision)]
    pub precision: Option<Precision>,
    /// Stop after this many epochs without improvement.
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub lr_multiplier: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset root written by `synth`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub domain: Option<FakeKind>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[command(flatten)]
    pub flags: TrainFlags,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    #[arg(long, default_value = "train")]
    pub run_id: String,
}

#[derive(Args, Debug)]
pub struct TransferArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Domain the checkpoint was trained on.
    #[arg(long)]
    pub source: Option<FakeKind>,
    /// Comma-separated target domains, one per stage.
    #[arg(long)]
    pub seq: Option<String>,
    /// Few-shot images per class and stage.
    #[arg(long)]
    pub shots: Option<usize>,
    /// Accept few-shot sets of another size.
    #[arg(long)]
    pub allow_count_mismatch: bool,
    #[command(flatten)]
    pub flags: TrainFlags,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    #[arg(long, default_value = "transfer")]
    pub run_id: String,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Comma-separated domains, or "all".
    #[arg(long)]
    pub domains: Option<String>,
    /// Domain to mark as the training domain in the table.
    #[arg(long)]
    pub base: Option<FakeKind>,
    /// Additive brightness shift in [0, 1] pixel units (negative darkens).
    #[arg(long, allow_hyphen_values = true)]
    pub brightness: Option<f64>,
    /// Contrast factor around mid-gray.
    #[arg(long)]
    pub contrast: Option<f64>,
    /// Row label (defaults to the checkpoint file stem).
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    #[arg(long, default_value = "eval")]
    pub run_id: String,
}

#[derive(Args, Debug)]
pub struct CamArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// P6 image of the model's input size.
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub layer: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    #[arg(long, default_value = "cam")]
    pub run_id: String,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    pub checkpoint: PathBuf,
}

fn parse_optimizer(s: &str) -> Result<OptimizerKind, String> {
    match s {
        "adam" => Ok(OptimizerKind::Adam),
        "sgd" => Ok(OptimizerKind::Sgd),
        _ => Err(format!("unknown optimizer {s:?} (expected adam or sgd)")),
    }
}

fn parse_source(s: &str) -> Result<ActivationSource, String> {
    match s {
        "raw" => Ok(ActivationSource::Raw),
        "facilitated" => Ok(ActivationSource::Facilitated),
        _ => Err(format!("unknown activation source {s:?} (expected raw or facilitated)")),
    }
}

fn parse_precision(s: &str) -> Result<Precision, String> {
    match s {
        "f32" => Ok(Precision::F32),
        "f64" => Ok(Precision::F64),
        _ => Err(format!("unknown precision {s:?} (expected f32 or f64)")),
    }
}

fn configure_threads(threads: Option<usize>) -> anyhow::Result<usize> {
    match threads {
        Some(0) => Err(TarError::config("--threads must be at least 1").into()),
        Some(1) => {
            tar_core::parallel::set_sequential(true);
            Ok(1)
        }
        #[cfg(feature = "parallel")]
        Some(n) => {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| TarError::config(format!("thread pool: {e}")))?;
            Ok(n)
        }
        #[cfg(not(feature = "parallel"))]
        Some(_) => {
            tar_core::parallel::set_sequential(true);
            Ok(1)
        }
        #[cfg(feature = "parallel")]
        None => Ok(rayon::current_num_threads()),
        #[cfg(not(feature = "parallel"))]
        None => Ok(1),
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if let Some(t) = e.downcast_ref::<TarError>() {
        return t.exit_code() as u8;
    }
    if e.downcast_ref::<std::io::Error>().is_some() {
        return 3;
    }
    1
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let threads = configure_threads(cli.global.threads)?;
    let g = commands::Globals {
        config: cli.global.config,
        seed: cli.global.seed,
        threads,
    };
    match cli.command {
        Command::Synth(a) => commands::synth(&g, a),
        Command::Train(a) => commands::train(&g, a),
        Command::Transfer(a) => commands::transfer(&g, a),
        Command::Eval(a) => commands::eval(&g, a),
        Command::Cam(a) => commands::cam(&g, a),
        Command::Inspect(a) => commands::inspect(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
