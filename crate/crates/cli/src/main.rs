mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Classify, filter, noise and restore dust-obscured orbital image patches.
#[derive(Debug, Parser)]
#[command(name = "marsdust", version)]
pub struct Cli {
    /// TOML run configuration; `MARSDUST_*` environment variables override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Log filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    pub log: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load a manifest, normalise every split and cache it as NPY.
    Ingest(IngestArgs),
    /// Pixel histogram and peaks of the dusty patches.
    AnalyzeNoise(AnalyzeNoiseArgs),
    /// Add synthetic dust noise to a folder of clean patches.
    Noise(NoiseArgs),
    /// Train a dusty / not-dusty classifier.
    Train(TrainArgs),
    /// Evaluate a saved classifier on a split.
    Eval(EvalArgs),
    /// Sort a folder of patches into a classified archive.
    Filter(FilterArgs),
    /// Train a denoising autoencoder.
    TrainAe(TrainAeArgs),
    /// Train the conditional GAN denoiser.
    TrainPix2pix(TrainPix2pixArgs),
    /// Restore a stack of noisy patches with a saved denoiser.
    Denoise(DenoiseArgs),
    /// Score a denoiser across noise levels.
    Sweep(SweepArgs),
    /// Compare restored and clean stacks.
    Metrics(MetricsArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Unit,
    SignedUnit,
    Standardized,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Manifest CSV; defaults to the configured dataset.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "unit")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 100)]
    pub height: usize,
    #[arg(long, default_value_t = 100)]
    pub width: usize,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct AnalyzeNoiseArgs {
    /// Folder of patches to analyse instead of the dataset's dusty patches.
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[arg(long, default_value = "train")]
    pub split: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct NoiseArgs {
    /// Fraction of pixels replaced.
    #[arg(long)]
    pub level: f64,
    /// Share of the replaced pixels drawn from the low band.
    #[arg(long)]
    pub ratio: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Svm,
    Cnn,
    Transfer,
    /// Contrast-threshold baseline.
    Stub,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub model: ModelArg,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run directory; defaults to `<output_dir>/train-<model>-seed<N>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// ResNet-50 weights (`.npz`) for the transfer model.
    #[arg(long)]
    pub weights: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model_dir: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Defaults to `<model-dir>/eval-<split>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub model_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
}

#[derive(Debug, Args)]
pub struct TrainAeArgs {
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long, default_value_t = 0.5)]
    pub noise_level: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Folder of clean patches; defaults to the dataset's not-dusty training patches.
    #[arg(long)]
    pub clean: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainPix2pixArgs {
    #[arg(long, default_value_t = 0.5)]
    pub noise_level: f64,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub ngf: Option<usize>,
    #[arg(long)]
    pub ndf: Option<usize>,
    #[arg(long)]
    pub clean: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Autoencoder,
    Pix2pix,
}

#[derive(Debug, Args)]
pub struct DenoiseArgs {
    #[arg(long)]
    pub model_dir: PathBuf,
    /// `.npz` holding a `noisy` (or single) u8 stack of shape (N, H, W).
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Expected backend; read from the model directory when omitted.
    #[arg(long, value_enum)]
    pub backend: Option<BackendArg>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub model_dir: PathBuf,
    /// Folder of clean patches; defaults to the dataset's not-dusty test patches.
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    /// Comma-separated noise levels in ascending order.
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<f64>>,
    #[arg(long)]
    pub ratio: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub restored: PathBuf,
    #[arg(long)]
    pub clean: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::new()
        .parse_filters(&cli.log)
        .format_timestamp(None)
        .init();
    match commands::run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let usage = e.downcast_ref::<commands::UsageError>().is_some();
            eprintln!("error: {e:#}");
            ExitCode::from(if usage { 1 } else { 2 })
        }
    }
}
