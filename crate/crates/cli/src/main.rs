//! `tradenet`: config-driven runs of the trade-network and growth-forecast
//! pipeline.
//!
//! ```text
//! tradenet --config run.toml build-networks
//! tradenet --config run.toml rank --section 16 --year 2019
//! tradenet --config run.toml panel
//! tradenet --config run.toml race
//! tradenet --config run.toml explain
//! ```
//!
//! Every run writes `manifest_<command>.json` into the output directory.
//! Exit codes: 0 success, 1 runtime failure, 2 usage or config error.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Context;
use crate::config::LoadedConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "tradenet", version, about = "Section-level trade networks and GDP-growth horse race")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse records, reconcile, write edge lists, metric series and relevance shares.
    BuildNetworks,
    /// Normalized PageRank table for one section and year.
    Rank {
        #[arg(long)]
        section: u8,
        #[arg(long)]
        year: i32,
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Join indicators with network features into the country-year panel.
    Panel,
    /// Tune, race and refit the winner.
    Race,
    /// Shapley importance, beeswarm and dependence exports for the winner.
    Explain {
        #[arg(long)]
        top_k: Option<usize>,
    },
}

fn context(cli: &Cli) -> Result<Context, CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::usage("--config is required"))?;
    let loaded = LoadedConfig::load(path)?;
    let seed = cli
        .seed
        .or(loaded.config.seed)
        .ok_or_else(|| CliError::usage("no seed: set `seed` in the config or pass --seed"))?;
    let out = match (&cli.out, &loaded.config.paths.output) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => loaded.resolve(o),
        (None, None) => return Err(CliError::usage("no output directory: set paths.output or pass --out")),
    };
    Ok(Context { loaded, seed, out })
}

fn run(cli: &Cli) -> Result<PathBuf, CliError> {
    let ctx = context(cli)?;
    match &cli.command {
        Command::BuildNetworks => commands::build_networks(&ctx),
        Command::Rank { section, year, top_k } => commands::rank(&ctx, *section, *year, *top_k),
        Command::Panel => commands::panel(&ctx),
        Command::Race => commands::race(&ctx),
        Command::Explain { top_k } => commands::explain(&ctx, *top_k),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.jobs {
        Some(0) => Err(CliError::usage("--jobs must be at least 1")),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| run(&cli)),
            Err(e) => Err(CliError::runtime(format!("thread pool: {e}"))),
        },
        None => run(&cli),
    };
    match result {
        Ok(manifest) => {
            println!("manifest {}", manifest.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("tradenet: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
