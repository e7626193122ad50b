//! Command-line driver: synthetic data, preprocessing, training, grid
//! search and the analyses, each leaving a manifest next to its outputs.

pub mod commands;
pub mod manifest;
pub mod settings;
pub mod workspace;

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::manifest::RunManifest;
use crate::settings::{load_config, Globals};

#[derive(Debug, Parser)]
#[command(name = "multicredit", version, about = "Multimodal SME credit scoring over firm networks")]
pub struct Cli {
    /// Overrides every seed (synthetic data, split and training).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for grid search and Shapley attribution.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Write into a non-empty output directory.
    #[arg(long, global = true)]
    pub force: bool,
    /// Config override, repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory with loans.csv, transactions.csv and ownership.csv.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory of a `train` run.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic data set with network contagion.
    Synth(SynthArgs),
    /// Split the data and fit the preprocessing pipeline.
    Prep(DataArgs),
    /// Train one model.
    Train(DataArgs),
    /// Train every combination of `grid.<key> = a|b|...` values.
    Grid(DataArgs),
    /// AUC and AUCPR with bootstrap intervals.
    Eval(ModelArgs),
    /// Per-loan modality contribution of an attention model.
    Contrib(ModelArgs),
    /// Shapley attribution over the tabular features.
    Explain(ModelArgs),
    /// Score densities of loans exposed to defaulters, by direction.
    Exposure(ModelArgs),
}

impl Cli {
    fn globals(&self) -> Globals {
        Globals {
            seed: self.seed,
            jobs: self.jobs,
            force: self.force,
            sets: self.sets.clone(),
        }
    }

    pub fn run(self) -> Result<RunManifest> {
        let g = self.globals();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(g.jobs.max(1))
            .build()
            .context("starting worker threads")?;
        pool.install(|| match &self.command {
            Command::Synth(a) => commands::synth(&load_config(a.config.as_deref(), &g)?, &a.out, g.force),
            Command::Prep(a) => commands::prep(&load_config(a.config.as_deref(), &g)?, &a.data, &a.out, g.force),
            Command::Train(a) => commands::train_cmd(&load_config(a.config.as_deref(), &g)?, &a.data, &a.out, g.force),
            Command::Grid(a) => commands::grid(&load_config(a.config.as_deref(), &g)?, &a.data, &a.out, g.force),
            Command::Eval(a) => analysis(commands::eval, a, &g),
            Command::Contrib(a) => analysis(commands::contrib, a, &g),
            Command::Explain(a) => analysis(commands::explain, a, &g),
            Command::Exposure(a) => analysis(commands::exposure, a, &g),
        })
    }
}

type AnalysisFn = fn(&multicredit::Config, &std::path::Path, &std::path::Path, &std::path::Path, bool) -> Result<RunManifest>;

fn analysis(f: AnalysisFn, a: &ModelArgs, g: &Globals) -> Result<RunManifest> {
    f(&load_config(a.config.as_deref(), g)?, &a.model, &a.data, &a.out, g.force)
}

/// Parses `args` (program name first) and runs the command.
pub fn run_from<I, T>(args: I) -> Result<RunManifest>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    Cli::try_parse_from(args)?.run()
}
