//! `patchcluster` command-line pipeline.

mod error;
mod heatmap;
mod mvtec;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use patchcluster::scoring::Scorer;

use crate::error::report_failure;

/// Environment variable holding the default worker count.
const WORKERS_ENV: &str = "PATCHCLUSTER_WORKERS";

#[derive(Parser)]
#[command(name = "patchcluster", version, about = "Blind anomaly detection with local patch-feature clustering")]
struct Cli {
    /// Worker threads [default: $PATCHCLUSTER_WORKERS, else one per core]
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert an MVTec AD tree into one manifest per category.
    ImportMvtec(mvtec::ImportArgs),
    /// Generate a synthetic contaminated feature dataset.
    Synth(pipeline::SynthArgs),
    /// Build a memory bank for one setting.
    Bank(BankArgs),
    /// Score every image of a setting against a bank.
    Score(ScoreArgs),
    /// Compute AUROC and PRO for a scoring run.
    Eval(pipeline::EvalArgs),
    /// Render score maps as PNG overlays.
    Heatmap(heatmap::HeatmapArgs),
    /// Bank, score and evaluate in one go.
    Run(RunArgs),
    /// Collect reports into a CSV table grouped by setting.
    ReportTable(pipeline::TableArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Setting {
    Mix,
    Test,
    Ano,
    OneClass,
}

impl Setting {
    pub fn name(self) -> &'static str {
        match self {
            Setting::Mix => "mix",
            Setting::Test => "test",
            Setting::Ano => "ano",
            Setting::OneClass => "one-class",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        <Self as ValueEnum>::from_str(name, false).ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScorerArg {
    Patchcluster,
    Patchcore,
    Lof,
}

impl From<ScorerArg> for Scorer {
    fn from(s: ScorerArg) -> Self {
        match s {
            ScorerArg::Patchcluster => Scorer::PatchCluster,
            ScorerArg::Patchcore => Scorer::PatchCore,
            ScorerArg::Lof => Scorer::Lof,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct BankOpts {
    /// Dataset manifest
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub setting: Setting,
    /// Coreset subsampling ratio in (0, 1]
    #[arg(long, default_value_t = 1.0)]
    pub ratio: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Measure coreset distances in a random projection of this dimension
    #[arg(long)]
    pub projection_dim: Option<usize>,
    /// Side of the local averaging window
    #[arg(long, default_value_t = 3)]
    pub patch_size: usize,
}

#[derive(Args, Debug, Clone)]
pub struct ScoreOpts {
    #[arg(long, value_enum, default_value = "patchcluster")]
    pub scorer: ScorerArg,
    /// Neighbors per patch [default: derived from the coreset ratio]
    #[arg(long)]
    pub k: Option<usize>,
    /// Rank of the first neighbor used [default: 2, or 1 for one-class]
    #[arg(long)]
    pub start_index: Option<usize>,
    /// Neighborhood size of the image-score reweighting [default: K]
    #[arg(long)]
    pub b: Option<usize>,
    /// Gaussian smoothing sigma in pixels
    #[arg(long, default_value_t = 4.0)]
    pub sigma: f64,
    /// Clamp the image-score weight to [0, 1]
    #[arg(long)]
    pub clamp_weight: bool,
}

#[derive(Args)]
pub struct BankArgs {
    #[command(flatten)]
    pub bank: BankOpts,
    /// Output directory for the bank
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Bank directory written by `bank`
    #[arg(long)]
    pub bank: PathBuf,
    /// Setting to score [default: the one the bank was built for]
    #[arg(long, value_enum)]
    pub setting: Option<Setting>,
    #[command(flatten)]
    pub score: ScoreOpts,
    /// Output directory for score maps and scores.json
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub bank: BankOpts,
    #[command(flatten)]
    pub score: ScoreOpts,
    /// Output directory (bank/, scores/, report.json)
    #[arg(long)]
    pub out: PathBuf,
}

fn init_workers(requested: Option<usize>) -> anyhow::Result<()> {
    let from_env = match std::env::var(WORKERS_ENV) {
        Ok(v) => Some(
            v.parse::<usize>()
                .map_err(|_| error::CliError::InvalidArgument(format!("{WORKERS_ENV}={v:?} is not a worker count")))?,
        ),
        Err(_) => None,
    };
    if let Some(n) = requested.or(from_env) {
        if n == 0 {
            return Err(error::CliError::InvalidArgument("worker count must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> anyhow::Result<serde_json::Value> {
    init_workers(cli.workers)?;
    match cli.command {
        Command::ImportMvtec(args) => mvtec::run(&args),
        Command::Synth(args) => pipeline::synth(&args),
        Command::Bank(args) => pipeline::bank(&args.bank, &args.out),
        Command::Score(args) => pipeline::score(&args.manifest, &args.bank, args.setting, &args.score, &args.out),
        Command::Eval(args) => pipeline::eval(&args),
        Command::Heatmap(args) => heatmap::run(&args),
        Command::Run(args) => pipeline::run(&args),
        Command::ReportTable(args) => pipeline::report_table(&args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(summary) => {
            if !summary.is_null() {
                println!("{summary}");
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            report_failure(&err);
            ExitCode::FAILURE
        }
    }
}
