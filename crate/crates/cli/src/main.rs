//! `bregtik` command-line runner.
//!
//! Exit codes: 0 success, 1 numerical failure (bound, slope or convergence),
//! 2 usage or config error.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod error;
mod output;

use commands::Context;
use error::CliError;
use output::OutDir;

#[derive(Parser)]
#[command(name = "bregtik", version, about = "Bregman-Tikhonov regularization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Adjoint, Taylor and Bregman property checks for a configured problem.
    Verify(Common),
    /// Single regularized solve; writes the minimizer as CSV.
    Solve(Common),
    /// Iterated Bregman-Tikhonov reconstruction with discrepancy stopping.
    Iterate(Common),
    /// Convergence-rate sweep over a noise grid.
    Rates(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, env = "BREGTIK_OUT", default_value = "out")]
    out: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; all cores when absent.
    #[arg(long)]
    jobs: Option<usize>,
}

type Runner = fn(&Context) -> Result<bool, CliError>;

fn execute(cli: Cli) -> Result<bool, CliError> {
    let (run, common): (Runner, Common) = match cli.command {
        Command::Verify(c) => (commands::verify::run, c),
        Command::Solve(c) => (commands::solve::run, c),
        Command::Iterate(c) => (commands::iterate::run, c),
        Command::Rates(c) => (commands::rates::run, c),
    };
    if let Some(j) = common.jobs {
        if j == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(j).build_global().map_err(|e| CliError::Config(e.to_string()))?;
    }
    let ctx = Context { out: OutDir::create(&common.out)?, config: common.config, seed: common.seed };
    run(&ctx)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
