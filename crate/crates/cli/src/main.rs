mod analysis;
mod args;
mod manifest;
mod models;
mod output;
mod stats;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};
use output::{CliResult, Failure};

const THREADS_ENV: &str = "DCPL_THREADS";

fn worker_count(flag: Option<usize>) -> CliResult<usize> {
    if let Ok(raw) = std::env::var(THREADS_ENV) {
        return match raw.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Failure::validation(
                "InvalidManifest",
                format!("{THREADS_ENV} must be a positive integer, got `{raw}`"),
            )),
        };
    }
    Ok(flag
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())))
}

fn dispatch(command: Command) -> CliResult {
    match command {
        Command::InitModel(a) => models::init_model(a),
        Command::Interpolate(a) => models::interpolate(a),
        Command::Translate(a) => models::translate(a),
        Command::Decompose(a) => analysis::decompose(a),
        Command::Verify(a) => analysis::verify(a),
        Command::Indicators(a) => analysis::indicators(a),
        Command::Series(a) => analysis::series(a),
        Command::Score(a) => analysis::score(a),
        Command::Dtw(a) => stats::dtw(a),
        Command::Permtest(a) => stats::permtest(a),
        Command::CorrelateCorpus(a) => stats::correlate_corpus(a),
        Command::CorrelateSentence(a) => stats::correlate_sentence(a),
    }
}

fn run() -> CliResult {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    Ok(())
                }
                ErrorKind::InvalidSubcommand | ErrorKind::MissingSubcommand => {
                    Err(Failure::validation("UnknownSubcommand", e.to_string().trim()))
                }
                ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    Err(Failure::validation("UnknownSubcommand", "no subcommand given"))
                }
                _ => Err(Failure::validation("InvalidArguments", e.to_string().trim())),
            };
        }
    };
    let threads = worker_count(cli.threads)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Failure::validation("InvalidManifest", e.to_string()))?;
    pool.install(|| dispatch(cli.command))
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("{}", failure.to_json());
            ExitCode::from(failure.code)
        }
    }
}
