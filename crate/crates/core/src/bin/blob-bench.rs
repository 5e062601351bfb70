use std::process::ExitCode;

use blob::cli::{run, Cli, Outcome};
use clap::Parser;

fn main() -> ExitCode {
    match run(&Cli::parse()) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::Failure) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
