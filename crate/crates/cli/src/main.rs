mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Driver-maneuver prediction from in-cabin gaze and exterior scene features.
#[derive(Debug, Parser)]
#[command(name = "mfusion", version)]
pub struct Cli {
    /// Print machine-readable JSON on stdout instead of tables.
    #[arg(long, global = true)]
    pub json: bool,
    /// JSON object whose keys set any flag of the subcommand. Flags win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Landmark JSON Lines to per-frame gaze and head-pose vectors.
    ExtractGaze(ExtractGazeArgs),
    /// Generate a synthetic labelled dataset.
    Synth(SynthArgs),
    /// Encode per-video artifact directories into a dataset file.
    Encode(EncodeArgs),
    /// Train one model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Stratified k-fold benchmark of one model.
    Benchmark(BenchmarkArgs),
    /// Interior-only versus full inputs for both models.
    Ablate(AblateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Flstm,
    Ftf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProtocolArg {
    Zero,
    Varying,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MaskArg {
    All,
    Interior,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TumRuleArg {
    Stable,
    FirstCorrect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClassDistArg {
    Uniform,
    Paper,
}

#[derive(Debug, Args)]
pub struct ExtractGazeArgs {
    /// Landmark file: a header line then one JSON object per frame.
    #[arg(long, value_name = "FILE")]
    pub landmarks: Option<PathBuf>,
    /// Face model JSON; the bundled generic model when omitted.
    #[arg(long, value_name = "FILE")]
    pub face_model: Option<PathBuf>,
    #[arg(long)]
    pub fx: Option<f64>,
    #[arg(long)]
    pub fy: Option<f64>,
    #[arg(long)]
    pub cx: Option<f64>,
    #[arg(long)]
    pub cy: Option<f64>,
    #[arg(long)]
    pub plane_z: Option<f64>,
    #[arg(long)]
    pub plane_scale: Option<f64>,
    /// Fail on the first malformed frame line instead of skipping it.
    #[arg(long)]
    pub strict: bool,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub class_dist: Option<ClassDistArg>,
    #[arg(long)]
    pub gaze_signal: Option<f64>,
    #[arg(long)]
    pub exterior_signal: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    /// Directory of `<maneuver>/<video>/` artifact folders.
    #[arg(long, value_name = "DIR")]
    pub root: Option<PathBuf>,
    /// Layout descriptor JSON overriding folder names and file names.
    #[arg(long, value_name = "FILE")]
    pub layout: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct TrainFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_name = "FILE")]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub model: Option<ModelArg>,
    #[arg(long, value_enum)]
    pub protocol: Option<ProtocolArg>,
    #[arg(long, value_enum)]
    pub mask: Option<MaskArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Checkpoint path; `.json` and `.history.json` sidecars go next to it.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    pub data: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Defaults to the mask recorded at training time.
    #[arg(long, value_enum)]
    pub mask: Option<MaskArg>,
    /// `varying` adds checkpoint accuracies and TUM.
    #[arg(long, value_enum)]
    pub protocol: Option<ProtocolArg>,
    #[arg(long, value_enum)]
    pub tum_rule: Option<TumRuleArg>,
    /// Also write the JSON report here.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[arg(long, value_name = "FILE")]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub model: Option<ModelArg>,
    #[arg(long, value_enum)]
    pub protocol: Option<ProtocolArg>,
    #[arg(long, value_enum)]
    pub mask: Option<MaskArg>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Concurrent folds; defaults to the number of folds.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Comma-separated subset of fold indices to run.
    #[arg(long, value_delimiter = ',')]
    pub folds: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    pub tum_rule: Option<TumRuleArg>,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Output directory for report.json, report.txt and profile files.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long, value_name = "FILE")]
    pub data: Option<PathBuf>,
    /// Models to compare, in column order.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub models: Option<Vec<ModelArg>>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub folds: Option<Vec<usize>>,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Output directory for ablation.json and ablation.txt.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or inputs, detected before any output is written.
    Invalid(String),
    /// Failure while running or writing results.
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Invalid(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("MF_LOG", "warn");
    env_logger::Builder::from_env(env).format_timestamp(None).init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_logging();
    log::info!(
        "mfusion {} started at {:?}",
        env!("CARGO_PKG_VERSION"),
        std::time::SystemTime::now()
    );
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
