mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use mmgraph::model::Variant;

/// Dynamic multimodal graph attention for action recognition.
#[derive(Debug, Parser)]
#[command(name = "mmgraph", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic episode dataset.
    GenData(GenDataArgs),
    /// Train one model variant and write its checkpoint and metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Train every variant over several seeds and print the ladder.
    Ablate(AblateArgs),
    /// Emit the adapted graph of one episode as DOT or structured JSON.
    ExportGraph(ExportArgs),
    /// Finite-difference gradient check of every parameter group.
    GradCheck(GradCheckArgs),
    /// Print an episode, dataset or checkpoint manifest.
    Inspect(InspectArgs),
}

/// Exit codes: 1 usage, 2 data or format, 3 numeric.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<mmgraph::Error> for CliError {
    fn from(e: mmgraph::Error) -> Self {
        use mmgraph::Error::*;
        let msg = e.to_string();
        match e {
            InvalidConfig(_) | EpochOutOfRange { .. } => CliError::Usage(msg),
            NonScalarLoss(_) | EmptyNeighborhood | IsolatedNode(_) | ZeroNorm | Numeric(_) => CliError::Numeric(msg),
            _ => CliError::Data(msg),
        }
    }
}

#[derive(Debug, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct GenDataArgs {
    /// Output directory.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Number of classes [default: 4]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classes: Option<usize>,
    /// Episodes per class [default: 50]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub episodes: Option<usize>,
    /// Frames per episode [default: 6]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frames: Option<usize>,
    /// Patches per frame [default: 16]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patches: Option<usize>,
    /// Object regions per frame [default: 2]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objects: Option<usize>,
    /// Visual embedding size [default: 32]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub visual_dim: Option<usize>,
    /// Text embedding size [default: 32]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text_dim: Option<usize>,
    /// Gaussian noise standard deviation [default: 0.1]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
    /// Random seed [default: 7]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// TOML file with defaults for any of these flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

/// Model and optimisation settings shared by `train` and `ablate`.
#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ModelFlags {
    /// Training epochs [default: 50]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    /// Minibatch size [default: 8]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    /// Peak learning rate [default: 1e-4]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    /// Warm-up epochs [default: 5]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warmup: Option<usize>,
    /// Validation share per class [default: 0.2]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_fraction: Option<f64>,
    /// Hidden size [default: 32]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    /// Graph attention layers [default: 2]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layers: Option<usize>,
    /// Object-object edge threshold [default: 0.3]
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spatial_threshold: Option<f64>,
    /// Text-object edge threshold [default: 0.3]
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub semantic_threshold: Option<f64>,
    /// Edges weaker than this are pruned [default: 0.1]
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prune_threshold: Option<f64>,
    /// Candidate pairs at least this similar are linked [default: 0.8]
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub add_threshold: Option<f64>,
    /// Scale messages by refined edge weights [default: false]
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weighted_messages: Option<bool>,
}

#[derive(Debug, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct TrainArgs {
    /// Dataset directory; a default synthetic set is generated when omitted.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// Output directory for model.json, model.bin and metrics.json [default: run]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// visual_only, plus_text, static_graph or full [default: full]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variant: Option<Variant>,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelFlags,
    /// Random seed [default: 7]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// TOML file with defaults for any of these flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct EvalArgs {
    /// Checkpoint manifest written by `train`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    /// Dataset directory; a default synthetic set is generated when omitted.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// Also write the metrics as JSON to this file.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Seed of the synthetic set used without --data [default: 7]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// TOML file with defaults for any of these flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct AblateArgs {
    /// Dataset directory; a default synthetic set is generated when omitted.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// Also write the ladder as JSON to this file.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Comma-separated training seeds [default: 1,2,3]
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelFlags,
    /// Seed of the split and of the synthetic set used without --data [default: 7]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// TOML file with defaults for any of these flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ExportArgs {
    /// Episode manifest.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub episode: Option<PathBuf>,
    /// Checkpoint manifest; freshly seeded parameters when omitted.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    /// dot or structured [default: dot]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<String>,
    /// Variant for seeded parameters [default: full]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variant: Option<Variant>,
    /// Write to this file instead of standard output.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Seed of the parameters used without --checkpoint [default: 7]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// TOML file with defaults for any of these flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct GradCheckArgs {
    /// Largest acceptable relative error [default: 1e-3]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    /// Seed of the tiny episode and the parameters [default: 1]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// TOML file with defaults for any of these flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct InspectArgs {
    /// Episode or checkpoint manifest, or a dataset directory.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Accepted for uniformity; inspection is not random.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// TOML file with defaults for any of these flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

/// Long flag names of a subcommand, which double as config keys.
fn config_keys(subcommand: &str) -> Vec<String> {
    let cmd = Cli::command();
    let sub = cmd.find_subcommand(subcommand).expect("known subcommand");
    sub.get_arguments()
        .filter_map(|a| a.get_long())
        .filter(|l| *l != "config")
        .map(str::to_string)
        .collect()
}

macro_rules! resolved {
    ($args:expr, $name:literal) => {
        config::resolve(&$args, $args.config.as_deref(), &config_keys($name))?
    };
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData(a) => commands::gen_data(resolved!(a, "gen-data")),
        Command::Train(a) => commands::train(resolved!(a, "train")),
        Command::Eval(a) => commands::eval(resolved!(a, "eval")),
        Command::Ablate(a) => commands::ablate(resolved!(a, "ablate")),
        Command::ExportGraph(a) => commands::export_graph(resolved!(a, "export-graph")),
        Command::GradCheck(a) => commands::grad_check(resolved!(a, "grad-check")),
        Command::Inspect(a) => commands::inspect(resolved!(a, "inspect")),
    }
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
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
