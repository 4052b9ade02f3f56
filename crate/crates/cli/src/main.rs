mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::RunConfig;

/// Physics-informed graph attention anomaly detection for water networks.
#[derive(Debug, Parser)]
#[command(name = "pgat", version)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Seed for every random draw of the stage.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Upper bound on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true)]
    pub log_level: Option<String>,
    /// JSON run configuration; explicit flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Network file operations.
    #[command(subcommand)]
    Net(NetCommand),
    /// Simulate a clean SCADA series.
    Simulate(SimulateArgs),
    /// Inject attacks into a saved series.
    Attack(AttackArgs),
    /// Build the per-node feature tensor of a series.
    Featurize(FeaturizeArgs),
    /// Train a model on feature tensors.
    Train(TrainArgs),
    /// Score a feature tensor and write alarms.
    Detect(DetectArgs),
    /// Evaluate a checkpoint on labelled series.
    Evaluate(EvaluateArgs),
    /// Robustness sweeps and ablations.
    Sweep(SweepArgs),
    /// Attention, attribution and score traces for one attack.
    Explain(ExplainArgs),
}

#[derive(Debug, Subcommand)]
pub enum NetCommand {
    /// Check a network file and print its invariant report.
    Validate { file: PathBuf },
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub net: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub days: usize,
    /// Relative sensor noise standard deviation.
    #[arg(long, default_value_t = 0.01)]
    pub noise: f64,
    /// JSON array of 24 hourly demand multipliers.
    #[arg(long)]
    pub pattern: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    /// JSON attack spec or array of specs.
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Network file; defaults to the series' own copy.
    #[arg(long)]
    pub net: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FeaturizeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub net: Option<PathBuf>,
    #[arg(long)]
    pub window: Option<usize>,
    /// Comma-separated: phi_mass, phi_energy, phi, normalize, interpolate.
    #[arg(long)]
    pub ablate: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    pub delta_roughness: Option<f64>,
    /// Mask this fraction of pressure sensors before featurizing.
    #[arg(long)]
    pub mask_fraction: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training tensors (repeat or comma-separate).
    #[arg(long, required = true, value_delimiter = ',')]
    pub features: Vec<PathBuf>,
    /// Validation tensors; the training tensors are used when absent.
    #[arg(long, value_delimiter = ',')]
    pub val: Vec<PathBuf>,
    #[arg(long)]
    pub net: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub net: PathBuf,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// A series directory or a directory of series directories.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub net: Option<PathBuf>,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    Roughness,
    Outage,
    Ablation,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub axis: Axis,
    /// Trained model (roughness and outage axes).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Evaluation series.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub net: Option<PathBuf>,
    /// Roughness deltas or outage fractions.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub values: Vec<f64>,
    /// Attack-free series for the residual baseline (roughness axis).
    #[arg(long)]
    pub clean: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub mask_seeds: Vec<u64>,
    /// Training series (ablation axis).
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Validation series (ablation axis).
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub variants: Vec<String>,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Series directory holding the attack.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub net: Option<PathBuf>,
    /// Index into the series' attack log.
    #[arg(long, default_value_t = 0)]
    pub attack: usize,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

/// 1 for bad input, 2 for internal faults.
fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(pe) = cause.downcast_ref::<pgat::Error>() {
            return match pe {
                pgat::Error::NonFinite(_) | pgat::Error::Dimension(_) => 2,
                _ => 1,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() || cause.downcast_ref::<serde_json::Error>().is_some() {
            return 1;
        }
    }
    if e.downcast_ref::<commands::UsageError>().is_some() {
        1
    } else {
        2
    }
}

/// The cause chain joined with `: `, skipping causes the previous message
/// already quotes.
fn render(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if out.ends_with(&msg) || out.contains(&format!("{msg}: ")) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&msg);
    }
    out
}

fn init_logging(level: &str) -> anyhow::Result<()> {
    let filter: log::LevelFilter = level
        .parse()
        .map_err(|_| commands::UsageError(format!("unknown log level `{level}`")))?;
    env_logger::Builder::new().filter_level(filter).format_timestamp(None).init();
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = match &cli.global.config {
        Some(p) => RunConfig::load(p).map_err(|e| commands::UsageError(format!("{e:#}")))?,
        None => RunConfig::default(),
    };
    let level = cli.global.log_level.clone().or(cfg.log_level.clone()).unwrap_or_else(|| "warn".into());
    init_logging(&level)?;
    let threads = cli.global.threads.or(cfg.threads).unwrap_or(1);
    if threads == 0 {
        return Err(commands::UsageError("--threads must be at least 1".into()).into());
    }
    log::debug!("running with a cap of {threads} thread(s); stages are single-threaded");
    let ctx = commands::Context {
        seed: cli.global.seed.or(cfg.seed),
        cfg,
    };
    commands::dispatch(&ctx, cli.command)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {}", render(&e));
            ExitCode::from(exit_code(&e))
        }
        Err(_) => ExitCode::from(2),
    }
}
