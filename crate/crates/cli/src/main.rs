mod commands;
mod config;
mod error;
mod io;
mod manifest;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{ArgAction, Parser};
use log::LevelFilter;

use crate::commands::Command;

/// Vector matching, comparison designs and the covariate-balance simulation
/// study for three or more treatments.
#[derive(Debug, Parser)]
#[command(name = "vecmatch", version, propagate_version = true)]
struct Cli {
    /// More log output; repeat for debug messages.
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let level = match cli.verbose {
        0 => LevelFilter::Warn,
        1 => LevelFilter::Info,
        _ => LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match commands::run(cli.command, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
