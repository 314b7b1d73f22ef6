use std::process::ExitCode;

use clap::Parser;

mod args;
mod benchmark;
mod error;
mod explain;
mod input;
mod methods;
mod render;
mod train;
mod verify;

use args::{Cli, Command};
use error::{CliError, CliResult};

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config(
                "EVA_THREADS / --threads must be at least 1".into(),
            ));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot start {n} worker threads: {e}")))?;
    }
    match &cli.command {
        Command::Explain(a) => explain::run(a),
        Command::Benchmark(a) => benchmark::run(a),
        Command::Verify(a) => verify::run(a),
        Command::Train(a) => train::run(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
