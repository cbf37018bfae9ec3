use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qlfr_core::chains::{ChainVariant, InContextMode};
use qlfr_core::classify::{PromptStyle, Strategy};
use tracing_subscriber::EnvFilter;

mod commands;
mod config;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] qlfr_core::Error),
}

impl From<qlfr_core::backend::BackendError> for CliError {
    fn from(e: qlfr_core::backend::BackendError) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    /// 2 config, 3 backend failure threshold, 4 data, 1 anything else.
    pub fn exit_code(&self) -> u8 {
        use qlfr_core::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Core(E::Config(_) | E::UnknownTemplate(_)) => 2,
            CliError::Core(E::FailureThreshold { .. }) => 3,
            CliError::Core(e) if e.is_data_error() => 4,
            CliError::Core(_) => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self.exit_code() {
            2 => "config",
            3 => "backend_threshold",
            4 => "data",
            _ => "runtime",
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "qlfr",
    version,
    about = "Chain-of-thought short-text classification pipeline"
)]
struct Cli {
    /// Run configuration file.
    #[arg(long, global = true, default_value = "qlfr.toml")]
    config: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[arg(long)]
    dataset: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    per_class: Option<usize>,
    /// Keep this share of each training class (0, 1].
    #[arg(long)]
    train_ratio: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample train/val/test splits and write them as JSONL.
    Prepare {
        #[command(flatten)]
        split: SplitArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify the test split and write predictions, traces and a report.
    Run {
        #[command(flatten)]
        split: SplitArgs,
        #[arg(long, value_enum, default_value = "qlfr")]
        method: MethodArg,
        #[arg(long, value_parser = parse_variant)]
        variant: Option<ChainVariant>,
        /// Prompt style for the direct method.
        #[arg(long, value_enum, default_value = "bare")]
        style: StyleArg,
        #[arg(long)]
        backend: Option<String>,
        #[arg(long, value_enum)]
        in_context: Option<InContextArg>,
        #[arg(long, value_enum)]
        strategy: Option<StrategyArg>,
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print an ACC/F1 table instead of the JSON report.
        #[arg(long)]
        table: bool,
    },
    /// Generate rationales over the training split.
    Rationales {
        #[command(flatten)]
        split: SplitArgs,
        #[arg(long)]
        backend: Option<String>,
        /// Cue profile for the domain chain.
        #[arg(long)]
        cues: Option<String>,
        #[arg(long)]
        no_sse: bool,
        #[arg(long)]
        no_da: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write multi-task training records and their manifest.
    Export {
        #[command(flatten)]
        split: SplitArgs,
        #[arg(long)]
        rationales: Option<PathBuf>,
        #[arg(long)]
        no_ecca: bool,
        #[arg(long)]
        no_sse: bool,
        #[arg(long)]
        no_da: bool,
        #[arg(long)]
        lambda1: Option<f64>,
        #[arg(long)]
        lambda2: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score an external predictions JSONL against a dataset.
    Eval {
        #[command(flatten)]
        split: SplitArgs,
        #[arg(long)]
        preds: PathBuf,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        table: bool,
    },
    /// Inspect or clear the completion cache.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
}

#[derive(Debug, Subcommand)]
enum CacheAction {
    Stats,
    Clear,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum MethodArg {
    Qlfr,
    Direct,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum StyleArg {
    Bare,
    Verbose,
    QlfrStep4,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum InContextArg {
    ZeroShot,
    OneShot,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum StrategyArg {
    ScoredArgmax,
    ParseText,
}

fn parse_variant(s: &str) -> Result<ChainVariant, String> {
    s.parse().map_err(|e: qlfr_core::Error| e.to_string())
}

impl From<StyleArg> for PromptStyle {
    fn from(s: StyleArg) -> Self {
        match s {
            StyleArg::Bare => PromptStyle::Bare,
            StyleArg::Verbose => PromptStyle::Verbose,
            StyleArg::QlfrStep4 => PromptStyle::QlfrStep4,
        }
    }
}

impl From<InContextArg> for InContextMode {
    fn from(m: InContextArg) -> Self {
        match m {
            InContextArg::ZeroShot => InContextMode::ZeroShot,
            InContextArg::OneShot => InContextMode::OneShot,
        }
    }
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::ScoredArgmax => Strategy::ScoredArgmax,
            StrategyArg::ParseText => Strategy::ParseText,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .json()
        .with_writer(std::io::stderr)
        .with_env_filter(
            EnvFilter::try_from_env("QLFR_LOG").unwrap_or_else(|_| EnvFilter::new("info")),
        )
        .init();
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({
                "error": e.kind(),
                "exit_code": e.exit_code(),
                "message": e.to_string(),
            });
            eprintln!("{line}");
            ExitCode::from(e.exit_code())
        }
    }
}
