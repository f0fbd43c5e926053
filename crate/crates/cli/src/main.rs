//! Command-line entry points: run orchestration, configuration, synthetic
//! dataset generation, and checkpoint lifecycle.

mod commands;
mod data;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cpl_core::CplError;

/// Exit status for a failed verification (as opposed to bad input).
pub const EXIT_CHECK_FAILURE: u8 = 3;
const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;

#[derive(Parser)]
#[command(
    name = "cpl",
    version,
    about = "Collaborative policy learning over knowledge graphs and text"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic graph, corpus, and query files.
    GenSynthetic(GenSyntheticArgs),
    /// Pre-train the path reasoner on graph-only rollouts.
    PretrainReasoner(PretrainReasonerArgs),
    /// Pre-train the extractor on distant-supervision labels.
    PretrainExtractor(PretrainExtractorArgs),
    /// Joint training of reasoner and extractor.
    Train(TrainArgs),
    /// Joint training with one component disabled.
    Ablate(AblateArgs),
    /// Rank test queries with saved checkpoints and print a metrics table.
    Evaluate(EvaluateArgs),
    /// Static extract-then-reason baseline over a threshold scan.
    BaselineTwoStep(BaselineTwoStepArgs),
    /// Finite-difference verification of both policy networks.
    GradCheck(GradCheckArgs),
}

#[derive(Args)]
pub struct GenSyntheticArgs {
    /// Key-value config with generator settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 55)]
    pub seed: u64,
    /// Overrides the corpus-only fraction of bridge edges.
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Output directory for the dataset files.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct PretrainReasonerArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 55)]
    pub seed: u64,
    /// Knowledge-graph triples, TSV.
    #[arg(long)]
    pub kg: PathBuf,
    /// Training queries, TSV.
    #[arg(long)]
    pub train_queries: PathBuf,
    /// Output directory; artifacts land in a seed-<n> subdirectory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct PretrainExtractorArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 55)]
    pub seed: u64,
    #[arg(long)]
    pub kg: PathBuf,
    /// Sentence corpus, JSON-lines.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 55)]
    pub seed: u64,
    #[arg(long)]
    pub kg: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub train_queries: PathBuf,
    #[arg(long)]
    pub valid_queries: PathBuf,
    /// Directory with pre-trained checkpoints; pre-training runs inline
    /// when absent.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AblationMode {
    /// Extractor parameters stay fixed through joint training.
    FrozenExtractor,
    /// No logit boost on suggested actions in any epoch.
    NoAdaptive,
    /// Graph-only walker; the corpus is ignored entirely.
    ReasonerOnly,
}

#[derive(Args)]
pub struct AblateArgs {
    #[arg(long, value_enum)]
    pub mode: AblationMode,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 55)]
    pub seed: u64,
    #[arg(long)]
    pub kg: PathBuf,
    /// Required unless --mode reasoner-only.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub train_queries: PathBuf,
    #[arg(long)]
    pub valid_queries: PathBuf,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seeds whose checkpoints to evaluate; one table block per seed plus
    /// an aggregate row.
    #[arg(long, value_delimiter = ',', default_value = "55")]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub kg: PathBuf,
    /// Enables corpus suggestions at inference when the checkpoint has a
    /// trained extractor.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub test_queries: PathBuf,
    /// Root directory holding seed-<n> checkpoint subdirectories.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub beam_width: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct BaselineTwoStepArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 55)]
    pub seed: u64,
    #[arg(long)]
    pub kg: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub train_queries: PathBuf,
    #[arg(long)]
    pub valid_queries: PathBuf,
    /// Evaluate only this confidence threshold instead of the default scan.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Directory with a pre-trained extractor checkpoint; pre-training runs
    /// inline when absent.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct GradCheckArgs {
    #[arg(long, default_value_t = 55)]
    pub seed: u64,
    /// Randomized trials per policy network.
    #[arg(long, default_value_t = 10)]
    pub trials: u64,
    /// Optional directory for the manifest and report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are successful exits; everything else is a
            // usage error.
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.cmd {
        Cmd::GenSynthetic(args) => commands::gen_synthetic(&args),
        Cmd::PretrainReasoner(args) => commands::pretrain_reasoner(&args),
        Cmd::PretrainExtractor(args) => commands::pretrain_extractor(&args),
        Cmd::Train(args) => commands::train(&args),
        Cmd::Ablate(args) => commands::ablate(&args),
        Cmd::Evaluate(args) => commands::evaluate(&args),
        Cmd::BaselineTwoStep(args) => commands::baseline_two_step(&args),
        Cmd::GradCheck(args) => commands::grad_check(&args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(data_exit_code(&e))
        }
    }
}

fn data_exit_code(e: &CplError) -> u8 {
    match e {
        CplError::Config(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}
