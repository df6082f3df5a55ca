//! `turncal`: simulate, classify, advantages, diagnose and calibrate.
//!
//! Exit codes: 0 success, 1 usage, 2 data or validation error, 3 calibration
//! did not converge.

mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use turncal::advantage::EstimatorKind;

#[derive(Parser, Debug)]
#[command(
    name = "turncal",
    version,
    about = "Turn-level reward and advantage toolkit for multi-turn tool-use rollouts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a rollout buffer from the synthetic airline environment.
    Simulate(SimulateArgs),
    /// Tier every turn and attach its reward.
    Classify(ClassifyArgs),
    /// Export per-turn advantages for one estimator.
    Advantages(AdvantagesArgs),
    /// Tier statistics, alignment, estimator comparison and gradient allocation.
    Diagnose(DiagnoseArgs),
    /// Run iterative reward calibration.
    Calibrate(CalibrateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Naive,
    Calibrated,
    Sparse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyPreset {
    Patterned,
    Faithful,
}

/// Where intended tier signs come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Intended {
    /// Signs of the reward table in use.
    Table,
    /// Fixed directions: gold, soft positive; read, message zero; the rest negative.
    Fixed,
}

#[derive(Args, Debug)]
pub struct ConfigArgs {
    /// TOML config with any of [rewards], [registry], [policy], [generation], [estimator], [irc].
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TableArgs {
    /// TOML file with a [rewards] table.
    #[arg(long, conflicts_with = "preset")]
    pub reward_table: Option<PathBuf>,
    /// Built-in reward table.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// TOML file with a [registry] table.
    #[arg(long)]
    pub registry: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EstimatorArgs {
    #[arg(long, value_parser = parse_estimator)]
    pub estimator: Option<EstimatorKind>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
}

#[derive(Args, Debug)]
pub struct GenerationArgs {
    /// Number of tasks, one group each.
    #[arg(long)]
    pub tasks: Option<usize>,
    /// Rollouts per task.
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    pub group_size: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Scripted-policy preset; a [policy] table in --config takes precedence.
    #[arg(long, value_enum)]
    pub policy: Option<PolicyPreset>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(short, long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub generation: GenerationArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct ClassifyArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    /// Defaults to standard output.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub table: TableArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct AdvantagesArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    /// Defaults to standard output.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub table: TableArgs,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct DiagnoseArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    /// Defaults to standard output.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    #[arg(long, value_enum, default_value_t = Intended::Table)]
    pub intended: Intended,
    #[command(flatten)]
    pub table: TableArgs,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    /// Directory of per-iteration buffers (*.jsonl, used in name order).
    /// Without it each iteration generates a fresh buffer with seed + iteration.
    #[arg(long)]
    pub buffer_dir: Option<PathBuf>,
    /// Final reward table (TOML). Defaults to standard output.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Iteration trace (JSON).
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[command(flatten)]
    pub generation: GenerationArgs,
    #[command(flatten)]
    pub table: TableArgs,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
}

fn parse_estimator(s: &str) -> Result<EstimatorKind, String> {
    s.parse::<EstimatorKind>()
        .map_err(|_| "expected one of grpo, mt_grpo, gtpo, hybrid".to_owned())
}

/// A failed run and the exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    NotConverged(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::NotConverged(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::NotConverged(m) => m,
        }
    }
}

impl From<turncal::Error> for Failure {
    fn from(e: turncal::Error) -> Self {
        match e {
            turncal::Error::Argument(_) => Failure::Usage(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Classify(a) => commands::classify(&a),
        Command::Advantages(a) => commands::advantages(&a),
        Command::Diagnose(a) => commands::diagnose(&a),
        Command::Calibrate(a) => commands::calibrate(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("turncal: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
