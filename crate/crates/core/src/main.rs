use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, ValueEnum};

use kljn::config::{load_config_with, Experiment, Overrides};
use kljn::experiment::{run_experiment, WORKERS_ENV};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ExperimentArg {
    Baseline,
    QSweep,
    OmegaSweep,
    BlindingDemo,
    TvdTable,
    PowerBalance,
}

impl From<ExperimentArg> for Experiment {
    fn from(e: ExperimentArg) -> Self {
        match e {
            ExperimentArg::Baseline => Experiment::Baseline,
            ExperimentArg::QSweep => Experiment::QSweep,
            ExperimentArg::OmegaSweep => Experiment::OmegaSweep,
            ExperimentArg::BlindingDemo => Experiment::BlindingDemo,
            ExperimentArg::TvdTable => Experiment::TvdTable,
            ExperimentArg::PowerBalance => Experiment::PowerBalance,
        }
    }
}

/// Monte-Carlo KLJN key-exchange experiments.
#[derive(Debug, Parser)]
#[command(
    name = "kljn-sim",
    version,
    after_help = "Worker threads: set KLJN_SIM_WORKERS (default: all cores)."
)]
struct Cli {
    experiment: ExperimentArg,
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Master seed, overriding the file.
    #[arg(long)]
    seed: Option<u64>,
    /// Trials per estimate, overriding the file.
    #[arg(long)]
    trials: Option<usize>,
    /// Output directory, overriding the file.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn configure_workers() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .with_context(|| format!("{WORKERS_ENV}={raw:?} is not a thread count"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("cannot start worker pool")?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    configure_workers()?;
    let overrides = Overrides {
        experiment: Some(cli.experiment.into()),
        seed: cli.seed,
        trials: cli.trials,
        output_dir: cli.out,
    };
    let cfg = load_config_with(&cli.config, &overrides)?;
    let summary = run_experiment(&cfg)?;
    print!("{summary}");
    println!("output directory: {}", cfg.output_dir.display());
    Ok(summary.all_passed())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more checks failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
