mod args;
mod commands;
mod error;
mod runfile;

use std::ffi::OsString;
use std::path::Path;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches};

use crate::args::Cli;
use crate::error::CliError;

/// Later occurrences of a flag replace earlier ones, so run-file values
/// (spliced in first) yield to explicit flags.
fn command_tree() -> clap::Command {
    fn override_self(cmd: clap::Command) -> clap::Command {
        cmd.args_override_self(true).mut_subcommands(override_self)
    }
    override_self(Cli::command())
}

fn run(argv: Vec<OsString>) -> Result<(), RunError> {
    let root = command_tree();
    let argv = match runfile::config_path(&argv) {
        Some(path) => runfile::expand(&root, argv, Path::new(&path))?,
        None => argv,
    };
    let matches = root.try_get_matches_from(argv).map_err(RunError::Clap)?;
    let cli = Cli::from_arg_matches(&matches).map_err(RunError::Clap)?;
    let resolved = serde_json::to_string(&cli.command).map_err(|e| CliError::Runtime(e.into()))?;
    eprintln!("resolved config: {resolved}");
    commands::dispatch(&cli.command)?;
    Ok(())
}

enum RunError {
    Clap(clap::Error),
    Cli(CliError),
}

impl From<CliError> for RunError {
    fn from(e: CliError) -> Self {
        RunError::Cli(e)
    }
}

fn main() -> ExitCode {
    match run(std::env::args_os().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(RunError::Clap(e)) => {
            let _ = e.print();
            ExitCode::from(e.exit_code() as u8)
        }
        Err(RunError::Cli(e)) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
