mod args;
mod commands;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::Cli;

/// Exit status for malformed invocations and invalid configurations.
const USAGE: u8 = 1;
/// Exit status for divergence, non-finite values and failed checks.
const NUMERIC: u8 = 2;

fn main() -> ExitCode {
    let argv = match args::expand_config(std::env::args().collect()) {
        Ok(argv) => argv,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(USAGE);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(USAGE),
            };
        }
    };
    match commands::run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                convseq::Error::NonFinite { .. } | convseq::Error::Diverged { .. } => NUMERIC,
                _ => USAGE,
            })
        }
    }
}
