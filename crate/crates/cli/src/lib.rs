//! The `aulm` command line: dataset building, both training stages,
//! validation, inference and statistics.
//!
//! Exit codes: 0 success, 1 failure (including validation violations and
//! divergence), 2 configuration or stage-data error, 3 I/O error, 4 speech
//! synthesis client error.

pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;

use std::path::PathBuf;

use aulm_data::asr::CorpusFormat;
use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::{Dtype, RunConfig};
pub use error::{CliError, CliResult, ExitClass};

#[derive(Debug, Parser)]
#[command(name = "aulm", version, about = "Speech instruction model pipeline at desk scale")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter conversations, synthesize user turns and write an instruction manifest.
    BuildDataset(BuildDatasetArgs),
    /// Stage 1: train the adaptor on ASR data with encoder and LLM frozen.
    Pretrain(PretrainArgs),
    /// Stage 2: train adaptor and LLM on speech instructions with the encoder frozen.
    Finetune(FinetuneArgs),
    /// Check every templated sample of a manifest, or the tensors of a checkpoint.
    Validate(ValidateArgs),
    /// Answer one spoken instruction with a trained checkpoint.
    Infer(InferArgs),
    /// Print per-source statistics of an instruction manifest.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML file overriding the built-in defaults; flags override the file.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for initialization, sample templating and batch order.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Floating-point precision of the model.
    #[arg(long, value_enum)]
    pub dtype: Option<Dtype>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TtsBackend {
    /// Offline tone-coded audio, deterministic.
    Mock,
    /// Shell command named by AULM_TTS_COMMAND.
    Command,
}

#[derive(Debug, Args)]
pub struct BuildDatasetArgs {
    /// Conversation dump (.json or .jsonl) or a directory of them.
    #[arg(long, value_name = "PATH")]
    pub corpus: PathBuf,
    /// Output directory for the manifest, audio, filter log and stats.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Run the filters and print would-be statistics without synthesizing or writing.
    #[arg(long)]
    pub dry_run: bool,
    /// Speech synthesis backend.
    #[arg(long, value_enum, default_value_t = TtsBackend::Mock)]
    pub tts: TtsBackend,
    /// Parallel synthesis workers.
    #[arg(long)]
    pub concurrency: Option<usize>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training manifest.
    #[arg(long, value_name = "PATH")]
    pub manifest: PathBuf,
    /// Checkpoint directory to write; also receives train_report.jsonl.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Start from this checkpoint instead of a fresh model.
    #[arg(long, value_name = "DIR")]
    pub init_from: Option<PathBuf>,
    /// Optimizer steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// AdamW learning rate.
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Samples per step.
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[command(flatten)]
    pub common: CommonArgs,
}

fn parse_format(s: &str) -> Result<CorpusFormat, String> {
    s.parse().map_err(|e: aulm_data::DataError| e.to_string())
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Layout of --manifest: jsonl, librispeech, aishell, magicdata or primewords [default: jsonl].
    #[arg(long, value_name = "FORMAT", value_parser = parse_format)]
    pub corpus_format: Option<CorpusFormat>,
    /// Text-only LLM training steps before stage 1, for untrained toy LLMs.
    #[arg(long, value_name = "STEPS")]
    pub llm_warm_start: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Checkpoint directory, instruction manifest or ASR corpus.
    #[arg(value_name = "PATH")]
    pub path: PathBuf,
    /// Layout of PATH when it is an ASR corpus [default: jsonl].
    #[arg(long, value_name = "FORMAT", value_parser = parse_format)]
    pub corpus_format: Option<CorpusFormat>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Checkpoint directory.
    #[arg(long, value_name = "DIR")]
    pub checkpoint: PathBuf,
    /// Spoken instruction, WAV or FLAC.
    #[arg(long, value_name = "FILE")]
    pub audio: PathBuf,
    /// Upper bound on generated tokens.
    #[arg(long)]
    pub max_new_tokens: Option<usize>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Instruction manifest.
    #[arg(long, value_name = "PATH")]
    pub manifest: PathBuf,
}

/// Runs one parsed command line.
pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::BuildDataset(a) => commands::build_dataset(a),
        Command::Pretrain(a) => commands::pretrain(a),
        Command::Finetune(a) => commands::finetune(a),
        Command::Validate(a) => commands::validate(a),
        Command::Infer(a) => commands::infer(a),
        Command::Stats(a) => commands::stats(a),
    }
}
