mod args;
mod commands;
mod config;
mod error;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::Cli;
use error::CliError;

const THREADS_ENV: &str = "HGLMM_THREADS";

fn threads(cli: &Cli) -> Result<Option<usize>, CliError> {
    if let Some(n) = cli.threads {
        return Ok(Some(n as usize));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(None),
    }
}

fn run() -> Result<(), CliError> {
    let argv = config::merge(std::env::args_os().collect())?;
    let cli = Cli::try_parse_from(argv)?;
    if let Some(n) = threads(&cli)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot start {n} threads: {e}")))?;
    }
    commands::run(cli.command)
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Clap(e)) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("hglmm: error: {e}");
            e.exit_code()
        }
    }
}
