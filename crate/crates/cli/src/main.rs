//! `qngpair` command-line tool.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error,
//! 4 criterion not violated.

mod analyze;
mod certify;
mod common;
mod error;
mod oracle;
mod report;
mod simulate;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::{CliError, CliResult, EXIT_CONFIG};

#[derive(Debug, Parser)]
#[command(
    name = "qngpair",
    version,
    about = "Photon-pair simulation, coincidence analysis and QNG certification"
)]
struct Cli {
    /// Worker threads; defaults to all cores.
    #[arg(long, env = "QNGPAIR_THREADS", global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a source and write a time-tag stream.
    Simulate(simulate::SimulateArgs),
    /// Analyse a stream or count table.
    #[command(subcommand)]
    Analyze(analyze::AnalyzeCommand),
    /// Evaluate a non-Gaussianity criterion.
    #[command(subcommand)]
    Certify(certify::CertifyCommand),
    /// Gaussian-source grid through the detection model.
    Oracle(oracle::OracleArgs),
    /// Write the plot-ready data bundles for a stream.
    Report(report::ReportArgs),
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("thread count must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    match &cli.command {
        Command::Simulate(args) => simulate::run(args),
        Command::Analyze(cmd) => analyze::run(cmd),
        Command::Certify(cmd) => certify::run(cmd),
        Command::Oracle(args) => oracle::run(args),
        Command::Report(args) => report::run(args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG as u8)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Core(qngpair::Error::Io(e)))
            if e.kind() == std::io::ErrorKind::BrokenPipe =>
        {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
