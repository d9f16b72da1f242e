use std::process::ExitCode;

use clap::Parser;
use stochastic_es_cli::{run, Cli};

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("stoch-es: {e}");
            e.exit_code()
        }
    }
}
