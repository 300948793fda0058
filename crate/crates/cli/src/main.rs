//! `mdde`: solve impulsive measure delay equations from a JSON config and run
//! the oscillation tests on them.
//!
//! Exit codes: 0 success (criterion verdicts live in the report), 1 missing or
//! unwritable file, 2 schema, validation or hypothesis failure, 3 numerical
//! failure. `MDDE_THREADS` caps the worker pool.

mod commands;
mod config;
mod failure;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{Mode, Overrides};
use failure::Failure;

#[derive(Parser, Debug)]
#[command(name = "mdde", version, about = "Impulsive measure delay equations: solver and oscillation tests")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// Problem config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `run.horizon`.
    #[arg(long, allow_negative_numbers = true)]
    horizon: Option<f64>,
    /// Overrides `run.tol`.
    #[arg(long)]
    tol: Option<f64>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            out: self.out.clone(),
            horizon: self.horizon,
            tol: self.tol,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve on [t0, horizon] and write the trajectory as CSV and JSON.
    Solve {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a criterion or run the certificate iteration.
    Check {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        mode: Mode,
    },
    /// Print the integral of p with respect to g over [a, b).
    Quad {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_negative_numbers = true)]
        a: f64,
        #[arg(long, allow_negative_numbers = true)]
        b: f64,
    },
}

fn init_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("MDDE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Failure::invalid(format!("MDDE_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::numeric(format!("cannot start {n} worker threads: {e}")))
}

fn run(cli: Cli) -> Result<String, Failure> {
    init_threads()?;
    match cli.command {
        Command::Solve { common } => commands::solve(&common.config, &common.overrides()),
        Command::Check { common, mode } => commands::check(&common.config, mode, &common.overrides()),
        Command::Quad { common, a, b } => commands::quad(&common.config, a, b, &common.overrides()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(line) => {
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("mdde: {f}");
            ExitCode::from(f.code)
        }
    }
}
