//! `blockprnu`: trace inspection, fingerprint estimation, matching,
//! calibration, simulation and evaluation.

use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod calibrate;
mod estimate;
mod evaluate;
mod inspect;
mod matching;
mod simulate;
mod util;

use util::CliError;

#[derive(Debug, Parser)]
#[command(name = "blockprnu", version, about = "Block-weighted PRNU fingerprinting from compressed video")]
struct Cli {
    /// Worker threads; 0 uses every available core. Output does not depend on it.
    #[arg(long, global = true, env = "BLOCKPRNU_WORKERS", default_value_t = 0)]
    workers: usize,

    /// Log level (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    log: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Summarize a block trace and/or an H.264 Annex-B stream.
    Inspect(inspect::Args),
    /// Estimate a fingerprint from decoded frames and their trace.
    Estimate(estimate::Args),
    /// Match test fingerprints against references by PCE.
    Match(matching::Args),
    /// Build a weight table from (key, PCE) observations.
    Calibrate(calibrate::Args),
    /// Simulate a camera capture and encode it: decoded video, trace, reference.
    Simulate(simulate::Args),
    /// Tabulate experiment grids, or run the simulated cohort study.
    Evaluate(evaluate::Args),
}

fn run(cli: Cli) -> Result<(), CliError> {
    let workers = cli.workers;
    blockprnu::par::with_workers(workers, move || match cli.command {
        Command::Inspect(a) => inspect::run(a),
        Command::Estimate(a) => estimate::run(a),
        Command::Match(a) => matching::run(a),
        Command::Calibrate(a) => calibrate::run(a),
        Command::Simulate(a) => simulate::run(a),
        Command::Evaluate(a) => evaluate::run(a),
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { util::EXIT_USAGE } else { 0 });
        }
    };
    env_logger::Builder::new().parse_filters(&cli.log).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
