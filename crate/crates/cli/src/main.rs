//! `hateid`: ingest, preprocess, split, train, grid-search, evaluate,
//! predict and report.
//!
//! Exit status is 0 on success, 1 for usage errors and 2 for failures while
//! running a command.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hateid_core::pretrained::{ENCODER_DIR_ENV, FEATURE_CACHE_ENV};

#[derive(Debug, Parser)]
#[command(
    name = "hateid",
    version,
    about = "Hate-speech identification experiments"
)]
pub struct Cli {
    /// TOML file with default values for any flag.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a labelled TSV and report its class counts.
    Ingest(IngestArgs),
    /// Normalize mentions, links, emojis and whitespace in a TSV.
    Preprocess(PreprocessArgs),
    /// Write a seeded train/val/test split.
    Split(SplitArgs),
    /// Train one model and save its checkpoint.
    Train(TrainArgs),
    /// Train every point of a hyperparameter grid.
    Gridsearch(GridArgs),
    /// Score a checkpoint on a labelled TSV.
    Evaluate(EvaluateArgs),
    /// Label an unlabelled TSV with a checkpoint.
    Predict(PredictArgs),
    /// Render a results table as markdown.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long = "in", value_name = "TSV")]
    pub input: PathBuf,
    /// 1a, 1b-flat or 1b-conditional.
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Default, Args)]
pub struct PipelineFlags {
    #[arg(long)]
    pub no_mentions: bool,
    #[arg(long)]
    pub no_links: bool,
    #[arg(long)]
    pub no_emojis: bool,
    #[arg(long)]
    pub no_whitespace: bool,
    /// Also lowercase texts.
    #[arg(long)]
    pub lowercase: bool,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long = "in", value_name = "TSV")]
    pub input: PathBuf,
    #[arg(long, value_name = "TSV")]
    pub out: PathBuf,
    #[command(flatten)]
    pub pipeline: PipelineFlags,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SplitFlags {
    /// Train, validation and test fractions.
    #[arg(long, value_delimiter = ',', value_name = "R,R,R")]
    pub ratios: Option<Vec<f64>>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Shuffle the whole set instead of each class separately.
    #[arg(long)]
    pub no_stratify: bool,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long = "in", value_name = "TSV")]
    pub input: PathBuf,
    #[arg(long)]
    pub task: Option<String>,
    #[command(flatten)]
    pub split: SplitFlags,
    #[arg(long)]
    pub out: PathBuf,
}

/// Where training data comes from: one file split on the fly, or
/// ready-made split files.
#[derive(Debug, Clone, Default, Args)]
pub struct DataFlags {
    /// Labelled TSV to split with --ratios/--seed.
    #[arg(long, value_name = "TSV", conflicts_with_all = ["train", "val"])]
    pub data: Option<PathBuf>,
    #[arg(long, value_name = "TSV", requires = "val")]
    pub train: Option<PathBuf>,
    #[arg(long, value_name = "TSV", requires = "train")]
    pub val: Option<PathBuf>,
    #[arg(long, value_name = "TSV", requires = "train")]
    pub test: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct OptimFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct EncoderFlags {
    /// Frozen or tuned encoder: base, large, base:DIR, large:DIR or
    /// stub:WIDTH[:SEED]. Weights are looked up under $HATEID_ENCODER_DIR.
    #[arg(long, value_name = "SPEC")]
    pub encoder: Option<String>,
    /// Token limit per text, [CLS] and [SEP] included.
    #[arg(long)]
    pub max_tokens: Option<usize>,
    /// Directory for cached encoder features.
    #[arg(long, env = FEATURE_CACHE_ENV, value_name = "DIR")]
    pub feature_cache: Option<PathBuf>,
    /// Feed the GRU one mean-pooled vector instead of the token sequence.
    #[arg(long)]
    pub pooled: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// char_lstm, word_lstm, bert_feature_gru or bert_finetune.
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub task: Option<String>,
    #[command(flatten)]
    pub data: DataFlags,
    #[command(flatten)]
    pub split: SplitFlags,
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub layers: Option<usize>,
    /// Allow values outside the published grids.
    #[arg(long)]
    pub unconstrained: bool,
    /// Word vectors (text format) to initialize the word embedding.
    #[arg(long, value_name = "FILE")]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub min_freq: Option<usize>,
    #[command(flatten)]
    pub optim: OptimFlags,
    #[command(flatten)]
    pub encoder: EncoderFlags,
    /// Train on the raw texts.
    #[arg(long)]
    pub no_preprocess: bool,
    #[command(flatten)]
    pub pipeline: PipelineFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PreprocessedChoice {
    Both,
    Yes,
    No,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub task: Option<String>,
    #[command(flatten)]
    pub data: DataFlags,
    #[command(flatten)]
    pub split: SplitFlags,
    /// JSON grid description replacing the family's preset.
    #[arg(long, value_name = "FILE")]
    pub grid: Option<PathBuf>,
    /// Encoder variants for the encoder families (default: base and large
    /// for features, base for fine-tuning).
    #[arg(long = "variant", value_name = "NAME")]
    pub variants: Vec<String>,
    #[arg(long, value_enum)]
    pub preprocessed: Option<PreprocessedChoice>,
    #[command(flatten)]
    pub pipeline: PipelineFlags,
    #[command(flatten)]
    pub optim: OptimFlags,
    #[command(flatten)]
    pub encoder: EncoderFlags,
    #[arg(long, value_name = "FILE")]
    pub embeddings: Option<PathBuf>,
    /// Runs trained in parallel.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Stop after this many new runs; rerun to continue.
    #[arg(long)]
    pub max_runs: Option<usize>,
    /// Do not keep per-run checkpoints.
    #[arg(long)]
    pub no_checkpoints: bool,
    /// Also write the rows that have published reference scores.
    #[arg(long)]
    pub reference_rows: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, value_name = "DIR")]
    pub checkpoint: PathBuf,
    #[arg(long, value_name = "TSV")]
    pub data: PathBuf,
    #[arg(long, env = FEATURE_CACHE_ENV, value_name = "DIR")]
    pub feature_cache: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long, value_name = "DIR")]
    pub checkpoint: PathBuf,
    #[arg(long = "in", value_name = "TSV")]
    pub input: PathBuf,
    /// 1A checkpoint deciding which posts a 1b-conditional model labels.
    #[arg(long, value_name = "DIR")]
    pub gate: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// results.json, rows.jsonl, or a grid output directory.
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,
    /// Keep only rows with published reference scores and show them.
    #[arg(long)]
    pub reference_rows: bool,
    /// Markdown file to write instead of printing.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    log::debug!(
        "encoder weights root: {:?}",
        std::env::var_os(ENCODER_DIR_ENV)
    );

    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if e.downcast_ref::<commands::UsageError>().is_some() {
                eprintln!("error: {e}\n\nRun `hateid --help` for usage.");
                ExitCode::from(1)
            } else {
                eprintln!("error: {e:#}");
                ExitCode::from(2)
            }
        }
    }
}
