//! `framechain` command-line tool: configurator, runner and profiler.

mod config;
mod profile;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "framechain", version, about = "Compose, run and profile plugin process lists")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Edit a process-list file.
    #[command(subcommand)]
    Config(config::ConfigCommand),
    /// Validate and execute a process list.
    Run(run::RunArgs),
    /// Render an event log as a text timeline or CSV.
    Profile {
        log: PathBuf,
        #[arg(long, value_enum, default_value_t = profile::Format::Text)]
        format: profile::Format,
    },
}

/// Error carrying the process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Failure { code, error: error.into() }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure { code: 1, error }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Config(cmd) => config::execute(cmd).map_err(Failure::from),
        Command::Run(args) => run::execute(args),
        Command::Profile { log, format } => profile::execute(&log, format).map_err(Failure::from),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
