//! `penlab` — config-driven driver for the penalty laboratory.
//!
//! ```text
//! penlab --config sweep.conf --out results/ [--jobs 4] [--seed 7]
//! penlab describe sc/kw_cubic --rho 0.2
//! ```
//!
//! The experiment itself (command, grid, obstacle, load, family, probe
//! directions) lives entirely in the config file; the flags only say where
//! results go and how many threads to use.  Exit codes: 0 on success, 2 for
//! a config or usage problem, 3 when a solve or write fails, 4 when a
//! verify run finds failing acceptance criteria.

mod config;
mod error;
mod expr;
mod fields;
mod output;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::run::DescribeArgs;

#[derive(Parser)]
#[command(
    name = "penlab",
    version,
    about = "Penalty approximations of the obstacle problem"
)]
struct Cli {
    /// Experiment config file (required unless a subcommand is given).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Thread count for the parallel parts (defaults to all cores; results
    /// do not depend on it).
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,

    /// Directory results are written into.
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,

    /// Overrides the config's rng seed for random probe directions.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,

    #[command(subcommand)]
    sub: Option<Sub>,
}

#[derive(Subcommand)]
enum Sub {
    /// Print a penalty family's closed form, parameters, and property checks.
    Describe(DescribeArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match real_main(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}

fn real_main(cli: Cli) -> Result<u8> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::validation("--jobs: must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::runtime(format!("cannot size the thread pool: {e}")))?;
    }

    if let Some(Sub::Describe(args)) = &cli.sub {
        return run::describe(args);
    }

    let Some(config_path) = &cli.config else {
        return Err(CliError::validation(
            "--config: required (or use the describe subcommand)",
        ));
    };
    let text = std::fs::read_to_string(config_path).map_err(|e| {
        CliError::validation(format!(
            "--config: cannot read '{}': {e}",
            config_path.display()
        ))
    })?;
    let config = ExperimentConfig::parse(&text)?;
    run::execute(&config, &cli.out, cli.seed)
}
