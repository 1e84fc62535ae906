//! Command-line driver: dataset → selection → refinement → metrics.

pub mod commands;
pub mod config;

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::{UsageError, EXIT_FAILURE, EXIT_USAGE};
use crate::config::{ConfigError, Overrides, Settings};

#[derive(Debug, Parser)]
#[command(
    name = "tcgen",
    version,
    about = "Generate and evaluate test suites for student Java code"
)]
pub struct Cli {
    /// Flat TOML config file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(flatten)]
    pub overrides: Overrides,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a corpus and list every problem found.
    Validate,
    /// Infer the number of tests behind each problem's scores.
    InferQ,
    /// Generate one test suite per problem.
    Generate,
    /// Score all submissions against generated suites.
    Evaluate {
        /// Suites directory (default: <out>/suites).
        #[arg(long, value_name = "DIR")]
        suites: Option<PathBuf>,
        /// Report directory (default: <out>/evaluation).
        #[arg(long, value_name = "DIR")]
        report_dir: Option<PathBuf>,
    },
    /// Re-aggregate an existing report.csv.
    Report {
        /// Input report (default: <out>/evaluation/report.csv).
        #[arg(long, value_name = "FILE")]
        input: Option<PathBuf>,
        /// Also write report files here.
        #[arg(long, value_name = "DIR")]
        report_dir: Option<PathBuf>,
    },
}

/// Runs a parsed command line with the given environment lookup.
pub fn run_with(cli: &Cli, env: impl Fn(&str) -> Option<String>, out: &mut dyn Write) -> i32 {
    let settings = match Settings::resolve(cli.config.as_deref(), env, &cli.overrides.pairs()) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return match e {
                ConfigError::Io { .. } => EXIT_FAILURE,
                _ => EXIT_USAGE,
            };
        }
    };
    let result = match &cli.command {
        Command::Validate => commands::validate(&settings, out),
        Command::InferQ => commands::infer_q(&settings, out),
        Command::Generate => commands::generate(&settings, out),
        Command::Evaluate { suites, report_dir } => {
            commands::evaluate(&settings, suites.as_deref(), report_dir.as_deref(), out)
        }
        Command::Report { input, report_dir } => {
            commands::report(&settings, input.as_deref(), report_dir.as_deref(), out)
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                EXIT_USAGE
            } else {
                EXIT_FAILURE
            }
        }
    }
}

pub fn run(cli: &Cli) -> i32 {
    run_with(cli, |k| std::env::var(k).ok(), &mut std::io::stdout())
}
