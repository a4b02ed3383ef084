//! `pathosynth`: generate pathology-encoded synthetic MRI samples, score
//! images and inspect generated samples.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.

mod commands;
mod config;
mod generate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(pathosynth::Error),
    Internal(String),
}

impl From<pathosynth::Error> for CliError {
    fn from(e: pathosynth::Error) -> Self {
        CliError::Data(e)
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(e) => write!(f, "error: {e}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "pathosynth",
    version,
    about = "Pathology-encoded synthetic brain MRI generator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate batches of samples from a dataset manifest.
    Generate(GenerateArgs),
    /// Score predictions against a reference image.
    Metrics(MetricsArgs),
    /// Render a slice of a generated sample and summarize its metadata.
    Inspect(InspectArgs),
    /// Compute training losses for predictions stored in sample directories.
    Loss(LossArgs),
}

#[derive(clap::Args, Debug)]
pub struct GenerateArgs {
    /// Dataset manifest (TOML).
    pub manifest: PathBuf,
    /// Output directory.
    pub out_dir: PathBuf,
    /// Generator config (TOML); flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub num_batches: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Output grid: `N` or `NxNxN`.
    #[arg(long, value_parser = config::parse_size)]
    pub sample_size: Option<[usize; 3]>,
    #[arg(long, env = "PATHOSYNTH_WORKERS")]
    pub workers: Option<usize>,
    /// Use one deformation for every sample of a batch.
    #[arg(long)]
    pub shared_deformation: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MetricKind {
    L1,
    Psnr,
    Ssim,
    Dice,
}

#[derive(clap::Args, Debug)]
pub struct MetricsArgs {
    /// Prediction file, or a directory searched recursively for NIfTI files.
    pub pred: PathBuf,
    /// Reference image.
    pub reference: PathBuf,
    #[arg(long, value_enum)]
    pub metric: MetricKind,
    /// Binarization threshold for Dice.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f32,
}

#[derive(clap::Args, Debug)]
pub struct InspectArgs {
    pub sample_dir: PathBuf,
    /// Slice to render, `axis:index` with axis x, y or z; defaults to the middle axial slice.
    #[arg(long)]
    pub slice: Option<String>,
    /// Output image (binary PGM).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Which volume of the sample to render.
    #[arg(long, default_value = "image")]
    pub volume: String,
}

#[derive(clap::Args, Debug)]
pub struct LossArgs {
    /// Sample directories holding `pred_anat.nii.gz` and `pred_pathol.nii.gz`.
    #[arg(required = true)]
    pub sample_dirs: Vec<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub iteration: u64,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(a) => generate::run(a),
        Command::Metrics(a) => commands::metrics(a),
        Command::Inspect(a) => commands::inspect(a),
        Command::Loss(a) => commands::loss(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = std::panic::catch_unwind(|| run(cli)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(CliError::Internal(msg))
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}
