use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use dedes::experiment::{run_stage, DatasetSource, ExperimentConfig, Stage};
use dedes::Error;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    /// Generate or ingest the dataset for each seed.
    Synth,
    /// Split the dataset across parties.
    Partition,
    /// Train every party's local model into the market store.
    Train,
    /// Select a team per method.
    Select,
    /// Score teams, fusions and the oracle on the global test set.
    Evaluate,
    /// Rank every non-empty team by weighted-vote accuracy.
    Inspect,
    /// Accuracy as a function of team size K.
    Sweep,
    /// Aggregate per-seed results into report.csv / report.json.
    Report,
    /// Run every stage in order.
    All,
}

impl Command {
    fn stage(self) -> Stage {
        match self {
            Command::Synth => Stage::Synth,
            Command::Partition => Stage::Partition,
            Command::Train => Stage::Train,
            Command::Select => Stage::Select,
            Command::Evaluate => Stage::Evaluate,
            Command::Inspect => Stage::Inspect,
            Command::Sweep => Stage::Sweep,
            Command::Report => Stage::Report,
            Command::All => Stage::All,
        }
    }
}

/// Data-free diversity-based ensemble selection over a simulated model market.
#[derive(Debug, Parser)]
#[command(name = "dedes", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Treat the first line of a CSV dataset as a header.
    #[arg(long)]
    header: bool,
    /// Largest market size allowed for complete inspection.
    #[arg(long = "m-cap")]
    m_cap: Option<usize>,
}

fn run(cli: &Cli) -> dedes::Result<()> {
    let mut cfg = ExperimentConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if cli.header {
        if let DatasetSource::Csv { header, .. } = &mut cfg.dataset {
            *header = true;
        }
    }
    if let Some(cap) = cli.m_cap {
        cfg.m_cap = cap;
    }
    cfg.validate()?;
    run_stage(cli.command.stage(), &cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
