//! `riskjump`: validate models, solve the HJB equation, simulate and verify
//! policies, and run the partial-observation filter.

mod common;
mod failure;
mod filter_demo;
mod simulate;
mod solve;
mod validate;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use failure::Failure;

/// The only output format this build writes and reads.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Parser, Debug)]
#[command(
    name = "riskjump",
    version,
    about = "Risk-sensitive asset management with jump-diffusion prices"
)]
struct Cli {
    /// Version of the CSV/JSON artifact layout.
    #[arg(long, global = true, default_value_t = FORMAT_VERSION)]
    format_version: u32,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a model document and print the report.
    Validate(validate::ValidateArgs),
    /// Print the zero-beta allocation and its constant running cost.
    ZeroBeta(ModelArgs),
    /// Solve the HJB equation by policy iteration on a grid.
    Solve(solve::SolveArgs),
    /// Estimate the criterion of a policy by Monte Carlo.
    Simulate(simulate::SimulateArgs),
    /// Cross-check a solved field against Monte Carlo and its invariants.
    Verify(verify::VerifyArgs),
    /// Simulate, decompose, filter and report filter consistency.
    FilterDemo(filter_demo::FilterArgs),
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// Model JSON document.
    #[arg(long)]
    pub model: PathBuf,
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("RISKJUMP_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw.trim().parse().map_err(|_| {
        Failure::usage(
            "RISKJUMP_THREADS",
            format!("expected a non-negative integer, got {raw:?}"),
        )
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::Runtime(e.to_string()))
}

fn run(cli: Cli) -> Result<(), Failure> {
    if cli.format_version != FORMAT_VERSION {
        return Err(Failure::usage(
            "--format-version",
            format!(
                "version {} is not supported, this build writes {FORMAT_VERSION}",
                cli.format_version
            ),
        ));
    }
    configure_threads()?;
    match cli.command {
        Command::Validate(args) => validate::run(&args),
        Command::ZeroBeta(args) => validate::zero_beta(&args),
        Command::Solve(args) => solve::run(&args),
        Command::Simulate(args) => simulate::run(&args),
        Command::Verify(args) => verify::run(&args),
        Command::FilterDemo(args) => filter_demo::run(&args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(Failure::USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
