mod commands;
mod config;
mod exit;
mod selfcheck;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use credit_core::exec::Exec;

use crate::config::Settings;
use crate::exit::CliError;

/// Certified ownership verification of embedding models.
///
/// Every run-configuration key can be set in the file given by --config or
/// by the flag of the same name; flags win.
#[derive(Debug, Parser)]
#[command(name = "credit", version, about, long_about = None)]
struct Cli {
    /// Flat TOML file of run-configuration keys.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    #[command(flatten)]
    settings: Settings,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Clip and release embeddings through the Gaussian mechanism.
    Defend,
    /// Estimate mutual information between suspect and defended embeddings.
    EstimateMi,
    /// Decide surrogate or independent and write a certificate.
    Verify,
    /// Pick the noise scale that balances utility loss and verification entropy.
    CalibrateSigma,
    /// Run the synthetic separation experiment.
    Simulate,
    /// Run oracle checks on this build.
    Selfcheck {
        #[arg(
            long,
            hide = true,
            env = selfcheck::CORRUPT_ENV,
            value_parser = clap::builder::BoolishValueParser::new()
        )]
        corrupt_digamma: bool,
    },
}

fn setup_threads(threads: Option<usize>) -> Result<Exec, CliError> {
    match threads {
        Some(1) => Ok(Exec::Sequential),
        Some(n) => {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| CliError::Config(format!("cannot start {n} threads: {e}")))?;
            Ok(Exec::Parallel)
        }
        None => Ok(Exec::default()),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let settings = match &cli.config {
        Some(path) => cli.settings.over(Settings::from_file(path)?),
        None => cli.settings,
    };
    settings.validate()?;
    let exec = setup_threads(settings.threads)?;
    let s = &settings;
    match cli.command {
        Command::Defend => commands::defend(s, exec),
        Command::EstimateMi => commands::estimate_mi(s, exec),
        Command::Verify => commands::verify_cmd(s, exec),
        Command::CalibrateSigma => commands::calibrate_sigma(s, exec),
        Command::Simulate => commands::simulate(s, exec),
        Command::Selfcheck { corrupt_digamma } => {
            selfcheck::run(s.seed(), corrupt_digamma, exec, s.output.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(exit::USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
