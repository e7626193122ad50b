use std::process::ExitCode;

use clap::Parser;
use multicredit_cli::Cli;

fn main() -> ExitCode {
    match Cli::parse().run() {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
