use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use relens_core::dsc::BudgetMode;
use relens_core::metrics::TiePolicy;

mod commands;

#[derive(Parser)]
#[command(name = "relens", version, about = "Relation-wise rank ensembles for link prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn ensemble weights on validation data and report metrics.
    Search(SearchArgs),
    /// Evaluate a weights file on queries and predictions.
    Eval(EvalArgs),
    /// Turn trial histories into best-so-far learning curves (CSV).
    Curve(CurveArgs),
    /// Dump a weights file as (relation, model, alpha) rows, normalized per relation.
    WeightsExport(ExportArgs),
    /// Write a synthetic corpus with planted relation specialists.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Mean,
    MrrMean,
    Stacking,
    Simple,
    Basic,
    Dsc,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Mean => "mean",
            Method::MrrMean => "mrr-mean",
            Method::Stacking => "stacking",
            Method::Simple => "simple",
            Method::Basic => "basic",
            Method::Dsc => "dsc",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OptimizerKind {
    Tpe,
    Random,
    Grid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Fallback {
    /// Equal weights.
    Uniform,
    /// The searched relation-agnostic column.
    Simple,
}

#[derive(Args, Clone)]
pub struct DataArgs {
    /// Validation queries (JSON Lines).
    #[arg(long)]
    pub queries: PathBuf,
    /// Validation predictions, one file per model.
    #[arg(long, num_args = 1.., required = true)]
    pub preds: Vec<PathBuf>,
    #[arg(long, value_parser = parse_tie, default_value = "average")]
    pub tie_policy: TiePolicy,
}

#[derive(Args)]
pub struct SearchArgs {
    #[arg(long, value_enum)]
    pub method: Method,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, requires = "test_preds")]
    pub test_queries: Option<PathBuf>,
    #[arg(long, num_args = 1.., requires = "test_queries")]
    pub test_preds: Vec<PathBuf>,
    /// Trial budget (per relation for dsc unless --budget-mode total).
    #[arg(long, default_value_t = 50)]
    pub trials: usize,
    /// Worker threads for dsc; RELENS_THREADS takes precedence.
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "tpe")]
    pub optimizer: OptimizerKind,
    #[arg(long, default_value_t = 0.1)]
    pub grid_step: f64,
    #[arg(long, value_parser = parse_budget_mode, default_value = "per-relation")]
    pub budget_mode: BudgetMode,
    #[arg(long, default_value_t = 0.25)]
    pub gamma: f64,
    /// Random trials before the density model is used.
    #[arg(long, default_value_t = 10)]
    pub startup: usize,
    #[arg(long, default_value_t = 24)]
    pub ei_candidates: usize,
    /// Column for relations absent from validation data (dsc).
    #[arg(long, value_enum, default_value = "uniform")]
    pub fallback: Fallback,
    #[arg(long, default_value_t = 300)]
    pub stacking_iterations: usize,
    #[arg(long, default_value_t = 1.0)]
    pub stacking_lr: f64,
    #[arg(long, default_value_t = 50)]
    pub stacking_negatives: usize,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Report path; stdout if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct CurveArgs {
    /// history.json files written by `search`.
    #[arg(long, num_args = 1.., required = true)]
    pub history: Vec<PathBuf>,
    /// CSV path; stdout if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub weights: PathBuf,
    /// CSV path; stdout if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub entities: usize,
    #[arg(long, default_value_t = 6)]
    pub relations: usize,
    #[arg(long, default_value_t = 3)]
    pub models: usize,
    #[arg(long, default_value_t = 200)]
    pub val_per_relation: usize,
    #[arg(long, default_value_t = 200)]
    pub test_per_relation: usize,
    #[arg(long, default_value_t = 50)]
    pub candidates: usize,
    /// Specialist relations per model, e.g. `0,3;1,4;2,5`. Defaults to round robin.
    #[arg(long)]
    pub specialists: Option<String>,
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_tie(s: &str) -> Result<TiePolicy, String> {
    s.parse().map_err(|e: relens_core::Error| e.to_string())
}

fn parse_budget_mode(s: &str) -> Result<BudgetMode, String> {
    s.parse().map_err(|e: relens_core::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Search(a) => commands::search(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Curve(a) => commands::curve(&a),
        Command::WeightsExport(a) => commands::weights_export(&a),
        Command::Synth(a) => commands::synth(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
