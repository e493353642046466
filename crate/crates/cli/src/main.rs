//! `crowd-nas`: synthetic data generation, architecture search, genotype
//! derivation, retraining, evaluation and reporting.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::{CliError, EXIT_CODES};

#[derive(Parser, Debug)]
#[command(name = "crowd-nas", version, about, after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every command.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML config file; `key=value` overrides take precedence over it.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Root seed for every random stream of the run.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Output root for all artifacts.
    #[arg(long, value_name = "DIR", env = "CROWD_NAS_OUT", default_value = "crowd-nas-out")]
    pub out: PathBuf,
    /// Validate the configuration and print the resolved plan without
    /// reading or writing any artifact.
    #[arg(long)]
    pub dry_run: bool,
    /// Dataset directory [default: <out>/dataset].
    #[arg(long, value_name = "DIR")]
    pub dataset: Option<PathBuf>,
    /// Architecture-parameter file [default: <out>/arch_params.json].
    #[arg(long, value_name = "PATH")]
    pub arch: Option<PathBuf>,
    /// Genotype file [default: <out>/genotype.json].
    #[arg(long, value_name = "PATH")]
    pub genotype: Option<PathBuf>,
    /// Weights file [default: <out>/weights.bin].
    #[arg(long, value_name = "PATH")]
    pub weights: Option<PathBuf>,
    /// Config overrides such as `search.epochs=4` or `retrain.loss=mse`.
    #[arg(value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic train/test dataset.
    GenData(Common),
    /// Run the two-level search and save architecture parameters.
    Search(Common),
    /// Discretize architecture parameters into a genotype.
    Derive(Common),
    /// Train the derived network from scratch.
    Retrain(Common),
    /// Evaluate retrained weights on the test split.
    Eval(Common),
    /// Write a human-readable summary with density-map images.
    Report(Common),
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData(c) => commands::gen_data(&c),
        Command::Search(c) => commands::search(&c),
        Command::Derive(c) => commands::derive(&c),
        Command::Retrain(c) => commands::retrain(&c),
        Command::Eval(c) => commands::eval(&c),
        Command::Report(c) => commands::report(&c),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("invalid command line")
                .trim_start_matches("error: ");
            eprintln!("{}", CliError::Usage(first.to_string()).line());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.exit_code())
        }
    }
}
