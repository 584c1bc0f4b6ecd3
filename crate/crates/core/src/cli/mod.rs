//! The `beliefkit` command line: argument parsing and dispatch.

mod commands;
pub mod config;
pub mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use crate::data::{LabelPolicy, Split, Task};
use crate::error::Error;
use crate::eval::TargetPolicy;
use crate::graph::GraphFormat;
use crate::optim::OptimizerKind;

pub use commands::{AblateAxis, AblateConfig, EditConfig, EvaluateConfig, GraphConfig, TrainEditorConfig, TrainTaskConfig, UpdaterConfig, UpdaterKind};

/// Parses a flag through the type's serde names.
fn serde_value<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "beliefkit", version, about = "Train, edit and evaluate the beliefs of small task models")]
pub struct Cli {
    /// TOML config. A table named after the subcommand is used when present.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root for run directories; defaults to $BELIEFKIT_RUNS, then ./runs.
    #[arg(long, global = true)]
    pub runs: Option<PathBuf>,
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate, validate or summarize belief stores.
    #[command(subcommand)]
    Data(DataCommand),
    /// Train a task model on a store.
    TrainTask(TrainTaskArgs),
    /// Train an editor for a frozen task model.
    TrainEditor(TrainEditorArgs),
    /// Apply one update to a model.
    Edit(EditArgs),
    /// Run the single or sequential update protocol and report metrics.
    Evaluate(EvaluateArgs),
    /// Train and evaluate one editor per value of an objective setting.
    Ablate(AblateArgs),
    /// Build, summarize or export belief graphs.
    #[command(subcommand)]
    Graph(GraphCommand),
    /// Merge report files into one table.
    Report(ReportArgs),
}

#[derive(Debug, Subcommand)]
pub enum DataCommand {
    /// Write train, dev and test stores for a synthetic world.
    Generate(GenerateArgs),
    /// Load and check a store directory.
    Validate(StoreArg),
    /// Record counts and data-type coverage per split.
    Stats(StoreArg),
}

#[derive(Debug, Args)]
pub struct StoreArg {
    /// Directory holding train.jsonl, dev.jsonl and test.jsonl.
    #[arg(long)]
    pub store: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_parser = serde_value::<Task>)]
    pub task: Option<Task>,
    #[arg(long)]
    pub entities: Option<usize>,
    #[arg(long)]
    pub paraphrases: Option<usize>,
    #[arg(long)]
    pub entailment_fraction: Option<f64>,
    #[arg(long)]
    pub exception_rate: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainTaskArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainEditorArgs {
    #[arg(long)]
    pub store: PathBuf,
    /// Task model checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub objective: ObjectiveArgs,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ObjectiveArgs {
    #[arg(long)]
    pub r_train: Option<usize>,
    #[arg(long)]
    pub k_train: Option<usize>,
    /// Inner steps at dev evaluation.
    #[arg(long)]
    pub k_dev: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_parser = serde_value::<LabelPolicy>)]
    pub label_policy: Option<LabelPolicy>,
    /// Objective terms joined by `+`, e.g. `main+paraphrase+kl_random`.
    #[arg(long)]
    pub terms: Option<String>,
    #[arg(long)]
    pub oversample_entailment: Option<bool>,
    /// Dev records used for checkpoint selection.
    #[arg(long)]
    pub dev_records: Option<usize>,
}

#[derive(Debug, Args)]
pub struct UpdaterArgs {
    #[arg(long, value_parser = serde_value::<UpdaterKind>)]
    pub updater: Option<UpdaterKind>,
    /// Editor checkpoint, required by the editor updater.
    #[arg(long)]
    pub editor: Option<PathBuf>,
    /// Inner editor steps per update.
    #[arg(long)]
    pub k_test: Option<usize>,
    #[arg(long, value_parser = serde_value::<OptimizerKind>)]
    pub optimizer: Option<OptimizerKind>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Pick the baseline from its grid by dev performance.
    #[arg(long)]
    pub tune: Option<bool>,
}

#[derive(Debug, Args)]
pub struct EditArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub updater: UpdaterArgs,
    /// Whitespace-tokenized input.
    #[arg(long)]
    pub input: String,
    #[arg(long)]
    pub desired: String,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub r_test: Option<usize>,
    #[arg(long, value_parser = serde_value::<TargetPolicy>)]
    pub targets: Option<TargetPolicy>,
    /// Evaluation seeds; each draws its own retain samples.
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub sample_size: Option<usize>,
    #[arg(long, value_parser = serde_value::<Split>)]
    pub split: Option<Split>,
    #[arg(long)]
    pub max_records: Option<usize>,
    #[arg(long)]
    pub resamples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub updater: UpdaterArgs,
    #[command(flatten)]
    pub eval: EvalArgs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_parser = serde_value::<AblateAxis>)]
    pub axis: Option<AblateAxis>,
    /// Comma-separated values along the axis.
    #[arg(long, value_delimiter = ',')]
    pub values: Option<Vec<String>>,
    #[command(flatten)]
    pub objective: ObjectiveArgs,
    #[command(flatten)]
    pub eval: EvalArgs,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum GraphCommand {
    /// Update every node of a binary store and record which beliefs flip.
    Build(GraphBuildArgs),
    /// Summary statistics of a graph file.
    Stats(GraphFileArg),
    /// Convert a graph file to DOT, GraphML or JSON.
    Export(GraphExportArgs),
}

#[derive(Debug, Args)]
pub struct GraphBuildArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub updater: UpdaterArgs,
    #[arg(long, value_parser = serde_value::<Split>)]
    pub split: Option<Split>,
    #[arg(long)]
    pub max_records: Option<usize>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GraphFileArg {
    /// Graph JSON written by `graph build`.
    #[arg(long)]
    pub graph: PathBuf,
}

#[derive(Debug, Args)]
pub struct GraphExportArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub format: GraphFormat,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Report JSON files or run directories containing report.json.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub title: Option<String>,
}

/// Exit code for runtime failures; usage errors exit with 2.
pub const EXIT_FAILURE: u8 = 1;

/// Machine-readable error line written to stderr.
pub fn error_json(e: &Error) -> serde_json::Value {
    let kind = match e {
        Error::Parse { .. } => "parse",
        Error::Validation(_) => "validation",
        Error::Config { .. } => "config",
        Error::UnknownToken(_) => "unknown_token",
        Error::Shape { .. } => "shape",
        Error::NonFinite(_) => "non_finite",
        Error::DegenerateVocabulary(_) => "degenerate_vocabulary",
        Error::UndefinedMetric(_) => "undefined_metric",
        Error::Manifest(_) => "manifest",
        Error::Empty(_) => "empty",
        Error::Invalid(_) => "invalid",
        Error::Checkpoint(_) => "checkpoint",
        Error::Step { .. } => "step",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
    };
    let mut v = serde_json::json!({ "error": { "kind": kind, "message": e.to_string() } });
    if let Error::Config { field, .. } = e {
        v["error"]["field"] = serde_json::Value::String(field.clone());
    }
    v
}

/// Runs parsed arguments. Prints the run directory on success.
pub fn run(cli: Cli) -> crate::Result<PathBuf> {
    commands::dispatch(cli)
}

/// Full entry point: parse `argv`, run, report errors.
pub fn main_with_args<I, T>(argv: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(2));
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    match run(cli) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::from(EXIT_FAILURE)
        }
    }
}
