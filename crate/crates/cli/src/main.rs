//! `tactforge`: reproducible pipelines over the tactforge-core modules.

mod commands;
mod selftest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tactforge_core::neural::Task;

#[derive(Parser, Debug)]
#[command(name = "tactforge", about = "Optical tactile sensor simulation and calibration", disable_version_flag = true)]
pub struct Cli {
    /// Seed for every random choice (overrides the config file and TACTFORGE_SEED).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// JSON configuration file; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Log more (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Print the version and exit.
    #[arg(long)]
    pub version: bool,
    /// With --version: machine-readable output.
    #[arg(long, requires = "version")]
    pub json: bool,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the stippled single-stroke gel pattern.
    Pattern(PatternArgs),
    /// Press one indenter into the gel and write depth, frame and wrench.
    Simulate(SimulateArgs),
    /// Render a camera frame from an encoded depth map.
    Render(RenderArgs),
    /// Build, filter or split datasets.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Train a depth or wrench model from scratch.
    Train(TrainArgs),
    /// Fine-tune a pretrained model on a new sensor.
    Transfer(TransferArgs),
    /// Evaluate a checkpoint and write a report.
    Eval(EvalArgs),
    /// Run built-in consistency checks.
    Selftest,
}

#[derive(Args, Debug, Clone, serde::Serialize)]
pub struct PatternArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub domain_mm: Option<f64>,
    /// Lloyd iterations.
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub px_per_mm: Option<f64>,
    #[arg(long)]
    pub stroke_mm: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the tour as SVG.
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, serde::Serialize)]
pub struct SimulateArgs {
    /// Library id (e.g. r1c3) or `sphere:<radius-mm>`.
    #[arg(long, conflicts_with = "stl")]
    pub indenter: Option<String>,
    /// STL mesh indenter.
    #[arg(long)]
    pub stl: Option<PathBuf>,
    #[arg(long)]
    pub penetration_mm: f64,
    #[arg(long, default_value_t = 0.0)]
    pub polar_deg: f64,
    #[arg(long, default_value_t = 0.0)]
    pub azimuth_deg: f64,
    /// Rotation of the indenter about the sensor axis.
    #[arg(long, default_value_t = 0.0)]
    pub spin_deg: f64,
    #[arg(long)]
    pub image_size: Option<usize>,
    /// Pattern PNG (generated from the config when absent).
    #[arg(long)]
    pub pattern: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, serde::Serialize)]
pub struct RenderArgs {
    /// 8-bit encoded depth PNG.
    #[arg(long)]
    pub depth: PathBuf,
    #[arg(long)]
    pub pattern: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug, Clone, serde::Serialize)]
pub enum DatasetCommand {
    /// Simulate, filter and write a dataset with its manifest.
    Build(BuildArgs),
    /// Re-filter a manifest's frames by PSNR similarity.
    Filter(FilterArgs),
    /// Hold out whole indenters as a test set.
    Split(SplitArgs),
}

#[derive(Args, Debug, Clone, serde::Serialize)]
pub struct BuildArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Rotation steps per indenter.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub image_size: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Comma-separated subset of library ids.
    #[arg(long)]
    pub indenters: Option<String>,
    #[arg(long)]
    pub pattern: Option<PathBuf>,
    #[arg(long)]
    pub sensor_id: Option<String>,
    #[arg(long)]
    pub no_depth: bool,
    #[arg(long)]
    pub no_wrench: bool,
}

#[derive(Args, Debug, Clone, serde::Serialize)]
pub struct FilterArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// File name of the filtered manifest, written beside the input.
    #[arg(long, default_value = "manifest.filtered.jsonl")]
    pub name: String,
}

#[derive(Args, Debug, Clone, serde::Serialize)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Comma-separated indenter ids for the test set.
    #[arg(long)]
    pub hold_out: String,
    /// Prefix of `train.jsonl` / `test.jsonl`, written beside the input.
    #[arg(long, default_value = "")]
    pub prefix: String,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum TaskArg {
    Depth,
    Wrench,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Task {
        match t {
            TaskArg::Depth => Task::Depth,
            TaskArg::Wrench => Task::Wrench,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum ModelSize {
    Desk,
    Tiny,
    /// Whatever the config file declares.
    Config,
}

#[derive(Args, Debug, Clone, serde::Serialize)]
pub struct Schedule {
    /// Validation manifest (defaults to a --hold-out split, or the training set).
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Comma-separated indenter ids held out for validation.
    #[arg(long, conflicts_with = "val")]
    pub hold_out: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Keep at most this fraction of the training frames.
    #[arg(long)]
    pub fraction: Option<f64>,
}

#[derive(Args, Debug, Clone, serde::Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum)]
    pub task: TaskArg,
    #[arg(long, value_enum, default_value = "config")]
    pub model: ModelSize,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub schedule: Schedule,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum TransferMode {
    #[value(name = "3dim")]
    ThreeDim,
    #[value(name = "6dim")]
    SixDim,
}

#[derive(Args, Debug, Clone, serde::Serialize)]
pub struct TransferArgs {
    #[arg(long, value_enum)]
    pub mode: TransferMode,
    #[arg(long)]
    pub pretrained: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Only fine-tune the decoder and head.
    #[arg(long)]
    pub freeze_encoder: bool,
    #[command(flatten)]
    pub schedule: Schedule,
}

#[derive(Args, Debug, Clone, serde::Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
}

/// Exit status for a failed run: 2 for bad arguments, 1 otherwise.
fn failure_code(err: &anyhow::Error) -> u8 {
    let invalid = err.chain().any(|e| {
        matches!(e.downcast_ref::<tactforge_core::Error>(), Some(tactforge_core::Error::InvalidArgument(_)))
            || e.downcast_ref::<commands::UsageError>().is_some()
    });
    if invalid {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(failure_code(&e))
        }
    }
}
