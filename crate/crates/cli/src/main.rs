//! `saedit` command-line tool.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data or format
//! error, 4 numeric failure (including a `score` result below its floors).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use saedit::sae::SparsityMode;
use saedit::ErrorKind;

#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self { code: 3, message: message.into() }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Self { code: 4, message: message.into() }
    }
}

impl From<saedit::Error> for CliError {
    fn from(e: saedit::Error) -> Self {
        let code = match e.kind() {
            ErrorKind::Usage => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numeric => 4,
        };
        Self { code, message: e.to_string() }
    }
}

#[derive(Parser, Debug)]
#[command(name = "saedit", version, about = "Sparse-autoencoder edit directions for text embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train an SAE on a corpus directory and calibrate its inference threshold.
    Train(TrainArgs),
    /// Extract an edit direction from a prompt-pair manifest.
    Extract(ExtractArgs),
    /// Apply a direction to one token of an embedding sequence.
    Apply(ApplyArgs),
    /// Print the per-step injection scale table.
    Schedule(ScheduleArgs),
    /// Generate a synthetic corpus, ground truth and prompt pairs.
    Synth(SynthArgs),
    /// Score a direction against synthetic ground truth.
    Score(ScoreArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Directory of .saed embedding files.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// CSV training report [default: <out>.csv].
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Latent width [default: 8 × embedding width].
    #[arg(long)]
    pub d_latent: Option<usize>,
    /// Active latents per token (K).
    #[arg(long)]
    pub k: Option<usize>,
    /// Auxiliary-loss weight (α).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Optimisation steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Tokens per batch (B).
    #[arg(long)]
    pub batch_tokens: Option<usize>,
    /// Dead latents per token recruited by the auxiliary loss.
    #[arg(long)]
    pub aux_k: Option<usize>,
    /// Tokens without activation before a latent counts as dead.
    #[arg(long)]
    pub dead_window: Option<u64>,
    /// Sparsity operator.
    #[arg(long, value_enum)]
    pub sparsity: Option<SparsityArg>,
    /// Nested prefix sizes, comma separated, ending at the latent width.
    #[arg(long, value_delimiter = ',')]
    pub matryoshka: Option<Vec<usize>>,
    /// Seed for initialisation and batch order.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Steps per report row.
    #[arg(long)]
    pub log_every: Option<usize>,
    /// Batches used for threshold calibration; 0 uses one full pass.
    #[arg(long)]
    pub calibration_batches: Option<usize>,
    /// Skip threshold calibration.
    #[arg(long)]
    pub no_calibrate: bool,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
pub enum SparsityArg {
    BatchTopk,
    Topk,
}

impl From<SparsityArg> for SparsityMode {
    fn from(s: SparsityArg) -> Self {
        match s {
            SparsityArg::BatchTopk => SparsityMode::BatchTopk,
            SparsityArg::Topk => SparsityMode::Topk,
        }
    }
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    /// Calibrated SAE checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Prompt-pair manifest (JSON lines).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output direction file.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Ratio stabiliser (ε).
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Normalised-ratio threshold (ρ).
    #[arg(long)]
    pub rho: Option<f64>,
    /// Seed for the aggregation power iteration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Force a latent into the index set (repeatable).
    #[arg(long = "include-index")]
    pub include_index: Vec<usize>,
    /// Remove a latent from the index set (repeatable).
    #[arg(long = "exclude-index")]
    pub exclude_index: Vec<usize>,
}

#[derive(Args, Debug)]
pub struct ApplyArgs {
    /// Calibrated SAE checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Embedding sequence to edit.
    #[arg(long)]
    pub input: PathBuf,
    /// Position of the token to edit.
    #[arg(long)]
    pub token_index: usize,
    /// Direction file.
    #[arg(long)]
    pub direction: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Edit scale (ω); repeat or comma-separate to sweep.
    #[arg(long, value_delimiter = ',')]
    pub omega: Vec<f64>,
    /// Diffusion steps (T).
    #[arg(long)]
    pub steps: Option<usize>,
    /// Explicit cap (τ).
    #[arg(long, conflicts_with = "tau_factor")]
    pub tau: Option<f64>,
    /// Cap as a multiple of ω [default: 15].
    #[arg(long)]
    pub tau_factor: Option<f64>,
    /// Emit one embedding at constant ω instead of a per-step schedule.
    #[arg(long)]
    pub constant: bool,
    /// At ω = 0, write the SAE reconstruction instead of the input.
    #[arg(long)]
    pub no_bypass: bool,
}

#[derive(Args, Debug)]
pub struct ScheduleArgs {
    /// Base scale (ω).
    #[arg(long)]
    pub omega: f64,
    /// Diffusion steps (T).
    #[arg(long)]
    pub steps: usize,
    /// Explicit cap (τ).
    #[arg(long, conflicts_with = "tau_factor")]
    pub tau: Option<f64>,
    /// Cap as a multiple of ω [default: 15].
    #[arg(long)]
    pub tau_factor: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory (corpus/, truth.json, pairs/).
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with [synth] and [pairs] sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Embedding width.
    #[arg(long)]
    pub d_model: Option<usize>,
    /// Number of dictionary atoms.
    #[arg(long)]
    pub n_features: Option<usize>,
    /// Active atoms per token.
    #[arg(long)]
    pub k_true: Option<usize>,
    /// Corpus prompts.
    #[arg(long)]
    pub n_prompts: Option<usize>,
    /// Tokens per prompt.
    #[arg(long)]
    pub tokens_per_prompt: Option<usize>,
    /// Padding rows appended to each prompt.
    #[arg(long)]
    pub padding_tokens: Option<usize>,
    /// Gaussian noise standard deviation.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Generator seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Attribute atom ids (repeatable).
    #[arg(long = "attribute")]
    pub attribute: Vec<usize>,
    /// Prompt pairs to emit; 0 skips pair generation.
    #[arg(long)]
    pub pairs: Option<usize>,
    /// Attribute planted in the pairs [default: first attribute id].
    #[arg(long)]
    pub pair_attribute: Option<usize>,
    /// Code value of the planted attribute.
    #[arg(long)]
    pub magnitude: Option<f64>,
    /// Noise level for pair embeddings [default: corpus sigma].
    #[arg(long)]
    pub pair_sigma: Option<f64>,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    /// Direction file.
    #[arg(long)]
    pub direction: PathBuf,
    /// SAE checkpoint the direction was extracted with.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Ground-truth file written by `synth`.
    #[arg(long)]
    pub truth: PathBuf,
    /// Attribute atom ids [default: those recorded in the truth file].
    #[arg(long = "attribute")]
    pub attribute: Vec<usize>,
    /// Minimum precision.
    #[arg(long, default_value_t = 0.0)]
    pub min_precision: f64,
    /// Minimum recall.
    #[arg(long, default_value_t = 0.0)]
    pub min_recall: f64,
    /// Minimum atom cosine.
    #[arg(long, default_value_t = 0.0)]
    pub min_cosine: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Extract(a) => commands::extract(a),
        Command::Apply(a) => commands::apply(a),
        Command::Schedule(a) => commands::schedule(a),
        Command::Synth(a) => commands::synth(a),
        Command::Score(a) => commands::score(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
