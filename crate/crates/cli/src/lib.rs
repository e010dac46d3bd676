//! Command-line driver for ensemble forecasting studies.

pub mod config;
pub mod manifest;
pub mod pipeline;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{Study, StudyConfig};

/// A problem with the config or inputs, reported with exit status 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Invalid(pub String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "flustack", version, about = "Weighted density ensembles for seasonal influenza forecasts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Study config (TOML).
    #[arg(long, global = true, default_value = "study.toml")]
    pub config: PathBuf,
    /// Overrides the master seed in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the output directory in the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write synthetic wILI and threshold files from the [simulate] section.
    Simulate,
    /// Leave-one-season-out component predictions on the training seasons.
    CvPredict,
    /// Cross-validated losses over the penalty grid.
    GridSearch,
    /// Train every configured ensemble scheme.
    TrainEnsemble,
    /// Test-phase component and ensemble predictions.
    Predict,
    /// Score test-phase predictions and rank models per season.
    Evaluate,
    /// Write scores, rankings and weights for plotting.
    ExportFigures,
    /// cv-predict, train-ensemble, predict, evaluate and export-figures in turn.
    All,
}

/// Runs one command against a loaded study.
pub fn execute(command: Command, study: &Study) -> anyhow::Result<()> {
    match command {
        Command::Simulate => pipeline::simulate(study),
        Command::CvPredict => pipeline::cv_predict(study),
        Command::GridSearch => pipeline::grid_search(study),
        Command::TrainEnsemble => pipeline::train_ensemble(study),
        Command::Predict => pipeline::predict(study),
        Command::Evaluate => pipeline::evaluate(study),
        Command::ExportFigures => pipeline::export_figures(study),
        Command::All => pipeline::run_all(study),
    }
}

/// Exit status for an error: 1 for bad configuration or input, 2 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    use flustack_core::Error as E;
    for cause in err.chain() {
        if cause.is::<Invalid>() {
            return EXIT_INVALID;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            if matches!(e, E::Config(_) | E::Ingest { .. } | E::Toml(_)) {
                return EXIT_INVALID;
            }
        }
    }
    EXIT_RUNTIME
}

/// Loads the study, sizes the thread pool and runs the command.
pub fn run(cli: &Cli) -> anyhow::Result<()> {
    let study = Study::load(&cli.config, cli.seed, cli.out.as_deref())?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(Invalid("--jobs must be at least 1".into()).into());
        }
        pool = pool.num_threads(n);
    }
    pool.build()?.install(|| execute(cli.command, &study))
}
