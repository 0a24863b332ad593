//! `dxplain`: synthetic data generation, training, evaluation, explanation
//! dumps and the TF-IDF baseline.

mod commands;
mod manifest;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "dxplain", version, about = "Depression detection with generated explanations")]
pub struct Cli {
    /// Seed for splitting, initialization, shuffling and sampling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Line-oriented key=value settings; flags take precedence.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Directory receiving every output file and the run manifest.
    #[arg(long, global = true, value_name = "PATH", default_value = "out")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Write a synthetic labeled corpus to data.jsonl.
    GenData(GenDataArgs),
    /// Train the joint classifier and explainer.
    Train(TrainArgs),
    /// Score a split (or a prediction dump) and write the report tables.
    Eval(EvalArgs),
    /// Dump predictions with generated explanations.
    Explain(ExplainArgs),
    /// Train and evaluate a non-neural baseline.
    Baseline(BaselineArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Explain(_) => "explain",
            Command::Baseline(_) => "baseline",
        }
    }
}

#[derive(Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub n_records: Option<usize>,
    #[arg(long)]
    pub positive_fraction: Option<f64>,
    /// Weights of short, medium and long posts, e.g. "0.4,0.4,0.2".
    #[arg(long)]
    pub length_mix: Option<String>,
    /// Fraction of positives written without symptom language.
    #[arg(long)]
    pub noise_rate: Option<f64>,
}

#[derive(Args)]
pub struct TrainArgs {
    /// JSON-Lines dataset.
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Weight of the classification loss.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Comma-separated λ values; trains one model per value and keeps the best.
    #[arg(long)]
    pub lambda_grid: Option<String>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Global gradient-norm bound; 0 disables clipping.
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub n_layers: Option<usize>,
    #[arg(long)]
    pub n_heads: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub min_freq: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum SplitName {
    Train,
    Val,
    Test,
    All,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
            SplitName::All => "all",
        }
    }
}

#[derive(Args)]
pub struct ModelInput {
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// Defaults to vocab.txt next to the checkpoint.
    #[arg(long, value_name = "PATH")]
    pub vocab: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub data: Option<PathBuf>,
    /// Which part of the seeded 70/10/20 split to use.
    #[arg(long, value_enum)]
    pub split: Option<SplitName>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub input: ModelInput,
    /// Evaluate a CSV dump with columns id,label,score,pred,word_count
    /// instead of running a checkpoint.
    #[arg(long, value_name = "PATH", conflicts_with_all = ["checkpoint", "vocab", "data", "split"])]
    pub predictions: Option<PathBuf>,
    /// λ the model was trained with; λ = 1 labels the row as the
    /// classification-only ablation.
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum DecodeName {
    Greedy,
    Sample,
}

#[derive(Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub input: ModelInput,
    /// Leave negatively predicted posts out of the dump.
    #[arg(long)]
    pub only_positive_predictions: bool,
    #[arg(long)]
    pub max_new: Option<usize>,
    #[arg(long, value_enum)]
    pub decode: Option<DecodeName>,
    #[arg(long)]
    pub temperature: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum BaselineName {
    SvmTfidf,
}

#[derive(Args)]
pub struct BaselineArgs {
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "svm-tfidf")]
    pub model: BaselineName,
    #[arg(long)]
    pub svm_min_df: Option<usize>,
    #[arg(long)]
    pub svm_epochs: Option<usize>,
    /// Comma-separated regularization strengths.
    #[arg(long)]
    pub svm_reg_grid: Option<String>,
}

/// Why a command failed.
pub enum CliError {
    /// Bad flag or config value; reported with usage and nothing is written.
    Usage(String),
    Run(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Run(e)
    }
}

impl From<settings::SettingsError> for CliError {
    fn from(e: settings::SettingsError) -> Self {
        CliError::Usage(e.0)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = cli.command.name();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            let mut cmd = Cli::command();
            cmd.build();
            let sub = cmd.find_subcommand_mut(name).expect("subcommand exists");
            sub.error(ErrorKind::ValueValidation, msg).exit()
        }
        Err(CliError::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
