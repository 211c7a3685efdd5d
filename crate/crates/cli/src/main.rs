//! `skyline`: generate traces, split, calibrate, train and evaluate.
//!
//! Exit codes: 0 on success, 1 on runtime or I/O failure, 2 on bad usage.

mod commands;
mod config;
mod split;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "skyline", version, about = "Budgeted layer scheduling over anytime reader traces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a seeded synthetic trace corpus (JSONL).
    GenTraces(GenTracesArgs),
    /// Split a corpus into train/dev0/dev1/test by hashing question ids.
    Split(SplitArgs),
    /// Fit per-layer temperatures on a dev corpus.
    Calibrate(CalibrateArgs),
    /// Train the scheduling policy with REINFORCE.
    Train(TrainArgs),
    /// Evaluate one scheduler configuration.
    Evaluate(EvaluateArgs),
    /// Evaluate a scheduler over a list of budgets, thresholds or k values.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
struct GenTracesArgs {
    /// Passages per question.
    #[arg(long)]
    n_passages: Option<usize>,
    /// Layers per passage.
    #[arg(long)]
    n_layers: Option<usize>,
    /// Number of questions.
    #[arg(long, default_value_t = 1000)]
    count: usize,
    #[arg(long)]
    seed: u64,
    /// Answer rate by rank, `a,b,c` in `a * exp(-b * (rank - 1)) + c`.
    #[arg(long, value_parser = parse_decay)]
    answer_decay: Option<(f64, f64, f64)>,
    /// Per-layer logit drift toward the true label.
    #[arg(long)]
    drift: Option<f64>,
    /// Standard deviation of the per-layer logit noise.
    #[arg(long)]
    noise_sd: Option<f64>,
    /// Probability that a confident answer passage reads out a correct answer.
    #[arg(long)]
    extraction_reliability: Option<f64>,
    /// TOML file with a `[generator]` table; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[arg(long)]
    traces: PathBuf,
    /// Directory receiving train.jsonl, dev0.jsonl, dev1.jsonl and test.jsonl.
    #[arg(long)]
    out_dir: PathBuf,
    /// Relative sizes of train, dev0, dev1 and test.
    #[arg(long, value_delimiter = ',', default_values_t = split::DEFAULT_RATIOS)]
    ratios: Vec<u64>,
    /// Salt mixed into the id hash.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    /// Dev corpus to fit on.
    #[arg(long)]
    dev: PathBuf,
    /// Smallest candidate temperature.
    #[arg(long, default_value_t = 0.25)]
    grid_min: f64,
    /// Largest candidate temperature.
    #[arg(long, default_value_t = 8.0)]
    grid_max: f64,
    /// Number of log-spaced candidates.
    #[arg(long, default_value_t = 32)]
    grid_points: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Training corpus.
    #[arg(long)]
    dev0: PathBuf,
    /// Held-out corpus for the per-epoch HAP column.
    #[arg(long)]
    dev1: Option<PathBuf>,
    #[arg(long)]
    calibration: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Episode budget in layers.
    #[arg(long)]
    max_steps: Option<usize>,
    /// Per-action cost c.
    #[arg(long)]
    step_cost: Option<f64>,
    /// Discount factor.
    #[arg(long)]
    gamma: Option<f64>,
    /// Enable a moving-average return baseline with this decay.
    #[arg(long)]
    baseline_decay: Option<f64>,
    /// Embedding width.
    #[arg(long, default_value_t = skyline_core::policy::DEFAULT_EMBEDDING_DIM)]
    embedding_dim: usize,
    /// Largest passage count the policy supports; defaults to the corpus's.
    #[arg(long)]
    n_max: Option<usize>,
    /// Priority of empty towers: `learnable` or a fixed number.
    #[arg(long, default_value = "learnable", value_parser = parse_init)]
    init_priority: skyline_core::InitPriority,
    /// Start from these parameters instead of a seeded random init.
    #[arg(long)]
    init: Option<PathBuf>,
    /// TOML file with a `[train]` table; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output parameters (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch history (CSV).
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StrategyName {
    TowerBuilder,
    Greedy,
    Policy,
    /// Uniformly random tower choice.
    Random,
    Standard,
    Efficient,
    TopK,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InitRuleName {
    RankOrder,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputModeName {
    LastLayer,
    AnyLayer,
}

#[derive(Debug, Args)]
struct SchedulerArgs {
    #[arg(long)]
    traces: PathBuf,
    /// Calibration table; identity temperatures if omitted.
    #[arg(long)]
    calibration: Option<PathBuf>,
    #[arg(long, value_enum)]
    strategy: StrategyName,
    /// Policy parameters (policy strategy).
    #[arg(long)]
    params: Option<PathBuf>,
    /// Empty-tower rule of the greedy strategy.
    #[arg(long, value_enum, default_value_t = InitRuleName::RankOrder)]
    init_rule: InitRuleName,
    /// Sample policy actions instead of taking the argmax.
    #[arg(long)]
    sample: bool,
    /// Seed for sampling (random strategy, or policy with --sample).
    #[arg(long)]
    seed: Option<u64>,
    /// Towers passed to the output phase.
    #[arg(long, default_value_t = 1)]
    m: usize,
    #[arg(long, value_enum, default_value_t = OutputModeName::LastLayer)]
    output_mode: OutputModeName,
    /// Report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Report as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    scheduler: SchedulerArgs,
    /// Budget in layers (greedy, policy, random).
    #[arg(long)]
    budget: Option<usize>,
    /// Exit threshold (tower-builder).
    #[arg(long)]
    tau: Option<f64>,
    /// Exit layer (efficient) or passage count (top-k).
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    scheduler: SchedulerArgs,
    /// Budgets in layers (greedy, policy, random).
    #[arg(long, value_delimiter = ',')]
    budgets: Vec<usize>,
    /// Exit thresholds (tower-builder).
    #[arg(long, value_delimiter = ',')]
    taus: Vec<f64>,
    /// Exit layers (efficient) or passage counts (top-k).
    #[arg(long, value_delimiter = ',')]
    ks: Vec<usize>,
}

fn parse_decay(s: &str) -> Result<(f64, f64, f64), String> {
    let parts: Vec<&str> = s.split(',').collect();
    let [a, b, c] = parts.as_slice() else {
        return Err(format!("expected a,b,c, got {s:?}"));
    };
    let num = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}"));
    Ok((num(a)?, num(b)?, num(c)?))
}

fn parse_init(s: &str) -> Result<skyline_core::InitPriority, String> {
    if s == "learnable" {
        return Ok(skyline_core::InitPriority::Learnable);
    }
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .map(skyline_core::InitPriority::Fixed)
        .ok_or_else(|| format!("expected `learnable` or a number, got {s:?}"))
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<skyline_core::Error> for Failure {
    fn from(e: skyline_core::Error) -> Self {
        match e {
            skyline_core::Error::Config(msg) => Failure::Usage(msg),
            other => Failure::Runtime(other.into()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenTraces(a) => commands::gen_traces(a),
        Command::Split(a) => commands::split(a),
        Command::Calibrate(a) => commands::calibrate(a),
        Command::Train(a) => commands::train(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Sweep(a) => commands::sweep(a),
    };
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
