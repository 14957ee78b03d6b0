//! Command-line driver: synthetic data, the training recipes, evaluation
//! and loss-curve plots.
//!
//! Every training command takes an optional flat config file (see
//! [`config`]) whose keys can be overridden by flags or `--set key=value`,
//! writes into a locked run directory, and emits `model.ckpt`,
//! `metrics.csv` and `config.resolved`.

pub mod commands;
pub mod config;
pub mod error;
pub mod metrics;
pub mod plot;
pub mod run;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::TrainKind;
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "slu",
    version,
    about = "End-to-end spoken language understanding experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train encoder and decoder on transcripts only (source-language ASR).
    PretrainAsr(TrainArgs),
    /// Train the intent model, optionally from a pre-trained encoder.
    TrainSlu(TrainArgs),
    /// Joint intent + ASR training with loss `slu + lambda * asr`.
    TrainMt(TrainArgs),
    /// Pre-train the bidirectional text encoder by masked-token prediction.
    PretrainTextenc(TextArgs),
    /// Multi-task training with a frozen text encoder fused into the decoder.
    TrainFusion(TrainArgs),
    /// Evaluate a saved model on a manifest.
    Eval(EvalArgs),
    /// Generate a synthetic corpus.
    Synth(SynthArgs),
    /// Render metrics columns from one or more CSV files as an SVG chart.
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    /// Flat key = value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training manifest (JSON lines).
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Validation manifest.
    #[arg(long)]
    pub valid: Option<PathBuf>,
    /// Run directory; relative paths go under $SLU_RUN_ROOT if set.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Metrics CSV path (default: <run>/metrics.csv).
    #[arg(long)]
    pub metrics_out: Option<PathBuf>,
    /// ASR loss weight in [0, 1].
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Checkpoint whose encoder initializes this model.
    #[arg(long)]
    pub init_encoder: Option<PathBuf>,
    /// What to do with the transferred encoder.
    #[arg(long, value_parser = ["fix", "finetune"])]
    pub policy: Option<String>,
    /// Pre-trained text encoder checkpoint.
    #[arg(long)]
    pub text_encoder: Option<PathBuf>,
    /// Override a config key, e.g. --set train.epochs=50.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TextArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Transcripts: a manifest (.jsonl) or one sentence per line.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub metrics_out: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Also greedy-decode transcripts and report positional token accuracy.
    #[arg(long)]
    pub decode: bool,
    #[arg(long, default_value_t = 200)]
    pub max_len: usize,
    #[arg(long)]
    pub metrics_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Pseudo-language: a (rich resource) or b (low resource).
    #[arg(long)]
    pub language: String,
    #[arg(long)]
    pub count: usize,
    /// Noise standard deviation relative to the symbol amplitude.
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Write only transcripts (corpus.txt), e.g. for text-encoder training.
    #[arg(long)]
    pub text_only: bool,
}

#[derive(Debug, Clone, Args)]
pub struct PlotArgs {
    /// Metrics CSV; repeat for several curves.
    #[arg(long, required = true)]
    pub metrics: Vec<PathBuf>,
    /// Legend entry per metrics file.
    #[arg(long)]
    pub label: Vec<String>,
    #[arg(long, default_value = "total_loss")]
    pub column: String,
    #[arg(long, default_value = "valid")]
    pub split: String,
    #[arg(long)]
    pub title: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Execute a parsed command line; returns the text for standard output.
pub fn run(cli: &Cli) -> CliResult<String> {
    match &cli.command {
        Command::PretrainAsr(a) => commands::train_command(TrainKind::PretrainAsr, a),
        Command::TrainSlu(a) => commands::train_command(TrainKind::Slu, a),
        Command::TrainMt(a) => commands::train_command(TrainKind::MultiTask, a),
        Command::TrainFusion(a) => commands::train_command(TrainKind::Fusion, a),
        Command::PretrainTextenc(a) => commands::pretrain_textenc(a),
        Command::Eval(a) => commands::eval(a),
        Command::Synth(a) => commands::synth(a),
        Command::Plot(a) => commands::plot(a),
    }
}
