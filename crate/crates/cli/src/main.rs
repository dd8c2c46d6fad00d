mod args;
mod commands;
mod manifest;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

const EXIT_CONFIG: i32 = 2;
const EXIT_DATA: i32 = 3;

/// An error with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.into(),
        }
    }
}

impl From<protoscope::Error> for CliError {
    fn from(e: protoscope::Error) -> Self {
        if e.is_config() {
            Self::config(e.to_string())
        } else {
            Self::data(e.to_string())
        }
    }
}

/// Caps rayon's pool at `PROTOSCOPE_THREADS` when set.
fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("PROTOSCOPE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n >= 1)
        .ok_or_else(|| CliError::config(format!("PROTOSCOPE_THREADS must be a positive integer, got '{raw}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::config(format!("cannot configure thread pool: {e}")))
}

fn run(cli: &Cli) -> Result<i32, CliError> {
    configure_threads()?;
    match &cli.command {
        Command::Eval(a) => commands::eval(a, cli.timing)?,
        Command::Bound(a) => commands::bound(a, cli.timing)?,
        Command::Synth(a) => commands::synth(a, cli.timing)?,
        Command::Verify(a) => {
            if !commands::verify(a, cli.timing)? {
                return Ok(commands::EXIT_VERIFY_FAIL);
            }
        }
        Command::Eigen(a) => commands::eigen(a, cli.timing)?,
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code as u8)
        }
    }
}
