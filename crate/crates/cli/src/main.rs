//! `ecodrive` — file-based pipeline from raw telemetry to driver feedback
//! and savings estimates. Every stage reads and writes fixed filenames under
//! `--out`, so stages can be rerun independently.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::PipelineConfig;

#[derive(Debug, Parser)]
#[command(
    name = "ecodrive",
    version,
    about = "Fuel-efficiency analytics for vehicle telemetry"
)]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print progress details to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    /// Directory for all outputs.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse telemetry, split journeys and aggregate one-minute events.
    Ingest {
        /// Telemetry CSV; defaults to the configured path or <out>/telemetry.csv.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Cluster each journey and label its events.
    Cluster(EventsArg),
    /// Train the random forest on labeled events.
    Train(LabeledArg),
    /// Cross-validate the forest and report classification statistics.
    Evaluate {
        #[command(flatten)]
        labeled: LabeledArg,
        /// Number of folds.
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Run the feedback engine over an events file.
    Replay {
        #[command(flatten)]
        events: EventsArg,
        /// Model file; defaults to the configured path or <out>/model.json.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Estimate fuel savings from following the feedback.
    Simulate {
        #[command(flatten)]
        events: EventsArg,
        /// Decision log matching the events; defaults to <out>/decisions.jsonl.
        #[arg(long)]
        decisions: Option<PathBuf>,
        /// Labeled events supplying the best-efficiency history; defaults to
        /// <out>/labeled_events.jsonl.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Generate synthetic telemetry and matching weather fixtures.
    Generate {
        /// Generator profile (JSON); defaults to the configured path.
        #[arg(long)]
        profile: Option<PathBuf>,
        /// Number of journeys, one per day.
        #[arg(long)]
        journeys: Option<usize>,
        /// Overrides the profile's driver style.
        #[arg(long, value_enum)]
        style: Option<StyleArg>,
    },
}

#[derive(Debug, Args)]
struct EventsArg {
    /// Events file (JSON lines); defaults to the stage's usual input under <out>.
    #[arg(long)]
    events: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct LabeledArg {
    /// Labeled events; defaults to <out>/labeled_events.jsonl.
    #[arg(long)]
    labeled: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StyleArg {
    Smooth,
    Aggressive,
    Mixed,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation, configuration or missing input; exit code 2.
    Usage(String),
    /// The data could not be processed; exit code 1.
    Domain(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Domain(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Domain(m) => f.write_str(m),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let ctx = commands::Context::new(cfg, cli.out, cli.verbose)?;
    match cli.command {
        Command::Ingest { input } => ctx.ingest(input),
        Command::Cluster(a) => ctx.cluster(a.events),
        Command::Train(a) => ctx.train(a.labeled),
        Command::Evaluate { labeled, folds } => ctx.evaluate(labeled.labeled, folds),
        Command::Replay { events, model } => ctx.replay(events.events, model),
        Command::Simulate {
            events,
            decisions,
            history,
        } => ctx.simulate(events.events, decisions, history),
        Command::Generate {
            profile,
            journeys,
            style,
        } => ctx.generate(
            profile,
            journeys,
            style.map(|s| match s {
                StyleArg::Smooth => ecodrive_core::simulator::DriverStyle::Smooth,
                StyleArg::Aggressive => ecodrive_core::simulator::DriverStyle::Aggressive,
                StyleArg::Mixed => ecodrive_core::simulator::DriverStyle::Mixed,
            }),
        ),
    }
}
