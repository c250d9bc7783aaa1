mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dualfuse::model::Variant;
use dualfuse::train::ScheduleMode;
use dualfuse::Error;

use config::{Preset, TokenizerChoice};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_ARTIFACT: u8 = 3;
pub const EXIT_NUMERICAL: u8 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }

    pub fn artifact(message: impl Into<String>) -> Self {
        Self { code: EXIT_ARTIFACT, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Numerical(_) => EXIT_NUMERICAL,
            Error::Config(_) | Error::Schedule(_) => EXIT_USAGE,
            _ => EXIT_ARTIFACT,
        };
        Self { code, message: e.to_string() }
    }
}

#[derive(Parser)]
#[command(name = "dualfuse", version, about = "Audio + transcript hate-speech classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute log-mel spectrograms for a wav file or a directory of wavs.
    Featurize(FeaturizeArgs),
    /// Print the token ids and mask for a transcript.
    Tokenize(TokenizeArgs),
    /// Train a model from a manifest or the synthetic task.
    Train(Box<TrainArgs>),
    /// Score a checkpoint on a manifest.
    Evaluate(EvaluateArgs),
    /// Classify one audio clip with its transcript.
    Predict(PredictArgs),
    /// Print the learning-rate schedule as CSV.
    LrDump(LrDumpArgs),
    /// Count manifest entries per source, split and label.
    Stats(StatsArgs),
}

#[derive(Args)]
pub struct FeaturizeArgs {
    /// A .wav file or a directory containing .wav files.
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory for .lmel files.
    #[arg(long, env = "DUALFUSE_OUT")]
    pub out: PathBuf,
    /// Audio is padded or trimmed to this many seconds.
    #[arg(long, default_value_t = 30)]
    pub chunk_seconds: usize,
}

#[derive(Args)]
pub struct TokenizerArgs {
    /// Vocabulary file, one token per line.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub tokenizer: Option<TokenizerChoice>,
}

#[derive(Args)]
pub struct TokenizeArgs {
    #[arg(long)]
    pub text: String,
    #[command(flatten)]
    pub tok: TokenizerArgs,
    #[arg(long, default_value_t = dualfuse::text::DEFAULT_MAX_LENGTH)]
    pub max_length: usize,
}

#[derive(Args)]
pub struct TrainArgs {
    /// JSONL manifest; audio paths are relative to its directory.
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    pub manifest: Option<PathBuf>,
    /// Train on n generated examples instead of a manifest.
    #[arg(long)]
    pub synthetic: Option<usize>,
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// attentive, concat, pipeline1 or pipeline2.
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for the checkpoint and metrics.
    #[arg(long, env = "DUALFUSE_OUT")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub tok: TokenizerArgs,

    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// literal or noam.
    #[arg(long)]
    pub schedule: Option<ScheduleMode>,
    #[arg(long)]
    pub warmup_steps: Option<u64>,
    /// d_model used by the learning-rate formula.
    #[arg(long)]
    pub schedule_d_model: Option<usize>,
    #[arg(long)]
    pub lr_cap: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub adam_eps: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long, conflicts_with = "no_clip")]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub no_clip: bool,
    #[arg(long)]
    pub no_class_weights: bool,

    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub ff_dim: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub lstm_units: Option<usize>,
    #[arg(long)]
    pub lstm_dropout: Option<f64>,
    #[arg(long)]
    pub fusion_dim: Option<usize>,
    #[arg(long)]
    pub max_length: Option<usize>,
    #[arg(long)]
    pub chunk_seconds: Option<usize>,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Fail unless the checkpoint holds this variant.
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Write the JSON here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub audio: PathBuf,
    #[arg(long)]
    pub text: String,
    #[arg(long)]
    pub variant: Option<Variant>,
}

#[derive(Args)]
pub struct LrDumpArgs {
    #[arg(long)]
    pub steps: u64,
    #[arg(long, default_value_t = ScheduleMode::Literal)]
    pub schedule: ScheduleMode,
    #[arg(long, default_value_t = 2048)]
    pub warmup_steps: u64,
    #[arg(long, default_value_t = 512)]
    pub d_model: usize,
    #[arg(long, default_value_t = 4e-4)]
    pub lr_cap: f64,
}

#[derive(Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Featurize(a) => commands::featurize(&a),
        Command::Tokenize(a) => commands::tokenize(&a),
        Command::Train(a) => commands::train(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::LrDump(a) => commands::lr_dump(&a),
        Command::Stats(a) => commands::stats(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
