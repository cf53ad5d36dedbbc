//! Batch command-line front end for the landmark-kit pipeline.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric
//! failure (singular matrices, degenerate decodes, failed gradient checks).
//! `LANDMARK_KIT_THREADS` caps internal data parallelism.

mod commands;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use landmark_kit::Error;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) if e.is_numeric() => 3,
            CliError::Core(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "usage error: {msg}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "landmark-kit",
    version,
    about = "Heatmap-based landmark localization pipeline",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with known ground truth
    Synth(SynthArgs),
    /// Encode manifest landmarks into target heatmaps (NPZ)
    Encode(EncodeArgs),
    /// Decode heatmaps (NPZ) into a landmark CSV
    Decode(DecodeArgs),
    /// Compare prediction and truth CSVs and write a detection report
    Evaluate(EvaluateArgs),
    /// Render a detection report as a table
    Report(ReportArgs),
    /// Fit heatmap sigma/rotation parameters to predicted heatmaps
    FitSigma(FitSigmaArgs),
    /// Verify analytic gradients against finite differences
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    /// Generator config JSON (all fields optional; flags override)
    #[arg(long)]
    config: Option<std::path::PathBuf>,
    /// Output directory
    #[arg(long)]
    out: std::path::PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_samples: Option<usize>,
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long)]
    distractors: Option<usize>,
}

#[derive(Args)]
pub struct EncodeArgs {
    /// Dataset manifest (landmark, mask or patch kind)
    #[arg(long)]
    manifest: std::path::PathBuf,
    /// Isotropic sigma, or one value per dimension (comma-separated)
    #[arg(long, default_value = "3")]
    sigma: String,
    /// Rotation angle(s) in radians, comma-separated per angle
    #[arg(long, default_value = "0")]
    rotation: String,
    /// Distribution: gaussian, laplace or one-hot
    #[arg(long, default_value = "gaussian")]
    kind: String,
    /// Rescale each channel to sum to 1
    #[arg(long)]
    normalize: bool,
    /// Optional cutoff radius in sigma units
    #[arg(long)]
    truncate: Option<f64>,
    /// Heatmap extents (comma-separated); defaults to the manifest's
    /// resize_to or each image's own extents
    #[arg(long)]
    size: Option<String>,
    /// Output NPZ path
    #[arg(long)]
    out: std::path::PathBuf,
}

#[derive(Args)]
pub struct DecodeArgs {
    /// Input heatmaps: an NPZ with one (C, ...) member per image, or a
    /// single NPY stack
    #[arg(long)]
    heatmaps: std::path::PathBuf,
    /// argmax, weighted-mean, local-weighted-mean or multi-instance
    #[arg(long, default_value = "local-weighted-mean")]
    method: String,
    /// identity, relu or softmax
    #[arg(long, default_value = "softmax")]
    activation: String,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    /// Odd window extent, one value or per dimension (local methods)
    #[arg(long, default_value = "3")]
    window: String,
    /// pixels or normalized
    #[arg(long, default_value = "pixels")]
    units: String,
    /// Instances per class (multi-instance method)
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Minimum peak separation in pixels (multi-instance method)
    #[arg(long, default_value_t = 0.0)]
    min_separation: f64,
    /// Optional manifest supplying class names
    #[arg(long)]
    manifest: Option<std::path::PathBuf>,
    /// Output CSV path
    #[arg(long)]
    out: std::path::PathBuf,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pred: std::path::PathBuf,
    #[arg(long)]
    truth: std::path::PathBuf,
    /// Pixel spacing in mm, comma-separated per dimension
    #[arg(long)]
    spacing: String,
    /// SDR radii in mm, comma-separated ascending
    #[arg(long, default_value = "1,2,2.5,3,4")]
    radii: String,
    /// Output JSON report path
    #[arg(long)]
    out: std::path::PathBuf,
}

#[derive(Args)]
pub struct ReportArgs {
    /// Detection report JSON
    #[arg(long = "in")]
    input: std::path::PathBuf,
    /// text or json
    #[arg(long, default_value = "text")]
    format: String,
}

#[derive(Args)]
pub struct FitSigmaArgs {
    /// Predicted heatmaps NPZ (one member per image id)
    #[arg(long)]
    heatmaps: std::path::PathBuf,
    /// Ground-truth landmark CSV
    #[arg(long)]
    truth: std::path::PathBuf,
    #[arg(long, default_value_t = 6.0)]
    init_sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    #[arg(long, default_value_t = 50.0)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 0.5)]
    sigma_min: f64,
    #[arg(long, default_value_t = 200)]
    steps: usize,
    /// Optional scheduler config JSON (window/decay/sigma_min/threshold)
    #[arg(long)]
    scheduler: Option<std::path::PathBuf>,
    /// Output JSON with fitted parameters
    #[arg(long)]
    out: std::path::PathBuf,
}

#[derive(Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn init_thread_pool() {
    if let Ok(value) = std::env::var("LANDMARK_KIT_THREADS") {
        if let Ok(n) = value.parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp
                | ErrorKind::DisplayVersion
                | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_thread_pool();
    let result = match cli.command {
        Command::Synth(args) => commands::synth(args),
        Command::Encode(args) => commands::encode(args),
        Command::Decode(args) => commands::decode(args),
        Command::Evaluate(args) => commands::evaluate(args),
        Command::Report(args) => commands::report(args),
        Command::FitSigma(args) => commands::fit_sigma(args),
        Command::Gradcheck(args) => commands::gradcheck(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
