//! Command-line pipeline for unsupervised RSS localization experiments:
//! synthesize data, train the Q-network and the fingerprint baseline,
//! evaluate every method on the held-out trajectories and compare them.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::Method;
pub use config::ExperimentConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "rssloc", version, about = "Unsupervised RSS localization workbench")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the master seed from the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }

    fn data(&self, data: &Option<PathBuf>) -> PathBuf {
        data.clone().unwrap_or_else(|| self.out.join(commands::DATASET_FILE))
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize the RSS database and the train/test trajectories.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train the Q-network on the training trajectories.
    TrainDqn {
        #[command(flatten)]
        common: Common,
        /// Dataset file; defaults to `<out>/dataset.bin`.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train the supervised fingerprint classifier on the labeled database.
    TrainFingerprint {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Localize the test trajectories and write error statistics.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Network weights; defaults to `<out>/<method>.weights`.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Merge metrics files into comparison tables and plot data.
    Report {
        #[arg(long)]
        out: PathBuf,
        /// `<method>_stats.json` files written by `eval`.
        #[arg(required = true)]
        metrics: Vec<PathBuf>,
    },
}

/// Runs one command; the returned lines name the files written.
pub fn run(cli: Cli) -> Result<Vec<PathBuf>, CliError> {
    let manifest = match &cli.command {
        Command::GenData { common } => commands::gen_data(&common.load()?, &common.out)?,
        Command::TrainDqn { common, data } => commands::train_dqn(&common.load()?, &common.data(data), &common.out)?,
        Command::TrainFingerprint { common, data } => {
            commands::train_fingerprint(&common.load()?, &common.data(data), &common.out)?
        }
        Command::Eval { common, method, data, weights } => {
            commands::eval(&common.load()?, *method, &common.data(data), weights.as_deref(), &common.out)?
        }
        Command::Report { out, metrics } => {
            let files = commands::report(metrics, out)?;
            let mut paths = vec![files.table];
            paths.extend(files.compare);
            paths.extend(files.cdf_plots);
            return Ok(paths);
        }
    };
    Ok(manifest.artifacts.into_iter().map(|a| a.path).collect())
}
