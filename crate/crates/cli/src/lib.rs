//! Command-line front end: dataset export, training, enhancement, evaluation and self-checks.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub mod commands;
pub mod layout;

/// Failure of a command, carrying the exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable or invalid configuration, refused overwrite.
    Usage(String),
    /// IO, numeric or training failure.
    Runtime(String),
    /// A self-check suite reported a failure.
    CheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::CheckFailed(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) | CliError::CheckFailed(m) => f.write_str(m),
        }
    }
}

impl From<tmgan::TensorError> for CliError {
    fn from(e: tmgan::TensorError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<tmgan::FormatError> for CliError {
    fn from(e: tmgan::FormatError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "tmgan", version, about = "Texture-matching GAN for CT image enhancement")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize phantoms, training pairs, the target texture bank and the evaluation set.
    GenData(GenDataArgs),
    /// Train a generator on an exported dataset.
    Train(TrainArgs),
    /// Apply one or two trained generators to images, blending their outputs.
    Enhance(EnhanceArgs),
    /// Score enhanced evaluation images: fidelity, noise level and texture.
    Evaluate(EvaluateArgs),
    /// Run the built-in oracle suites.
    Check(CheckArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Run configuration (`key = value` lines).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write into a non-empty directory, replacing earlier output.
    #[arg(long)]
    pub force: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Full objective.
    Tmgan,
    /// Bias-reducing companion (λ = 0).
    Br,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PrecisionArg {
    Train32,
    Test64,
}

impl From<PrecisionArg> for tmgan::trainer::Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::Train32 => tmgan::trainer::Precision::Train32,
            PrecisionArg::Test64 => tmgan::trainer::Precision::Test64,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory written by `gen-data`.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint to write; the log goes to `<out>.log.csv`.
    #[arg(long)]
    pub out: PathBuf,
    /// Training settings; defaults to the dataset's own configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Objective to train; defaults to tmgan.
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub precision: Option<PrecisionArg>,
    /// Continue from this checkpoint under its stored configuration.
    #[arg(long, conflicts_with_all = ["config", "mode", "seed", "precision"])]
    pub resume: Option<PathBuf>,
    /// Also write the checkpoint every this many updates.
    #[arg(long, default_value_t = 0)]
    pub save_every: usize,
    /// Only report errors.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    /// Checkpoint of the texture-matching model.
    #[arg(long)]
    pub tmgan: PathBuf,
    /// Checkpoint of the bias-reducing model; required when eta < 1.
    #[arg(long)]
    pub br: Option<PathBuf>,
    /// Blend weight of the texture-matching output; defaults to the checkpoint's value.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Image file, or a directory of `.txim` images.
    #[arg(long)]
    pub input: PathBuf,
    /// Output file, or directory when the input is a directory.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Dataset directory written by `gen-data`.
    #[arg(long)]
    pub data: PathBuf,
    /// `name=dir` of enhanced evaluation images; repeatable.
    #[arg(long = "method", value_parser = parse_method)]
    pub methods: Vec<(String, PathBuf)>,
    /// Directory for metrics.csv and the NPS curves.
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_method(s: &str) -> Result<(String, PathBuf), String> {
    let (name, dir) = s
        .split_once('=')
        .ok_or_else(|| format!("expected name=dir, got {s:?}"))?;
    let ok = !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
    if !ok || matches!(name, "input" | "target") {
        return Err(format!(
            "method name {name:?} must be [A-Za-z0-9_-]+ and not input/target"
        ));
    }
    Ok((name.to_string(), PathBuf::from(dir)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Grad,
    Theorem,
    Nps,
    All,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(value_enum, default_value = "all")]
    pub suite: Suite,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Run a parsed command.
pub fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::GenData(a) => commands::gen_data::run(&a),
        Command::Train(a) => commands::train::run(&a),
        Command::Enhance(a) => commands::enhance::run(&a),
        Command::Evaluate(a) => commands::evaluate::run(&a),
        Command::Check(a) => commands::check::run(&a),
    }
}
