//! Experiment runner behind the `dreamdiff` binary.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod report;
pub mod suites;

use std::io::Write;

use clap::Parser;

pub use commands::{Cli, Command};
pub use config::ExperimentConfig;

/// Parses `args`, runs the subcommand and returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match commands::execute(cli.command) {
        Ok((summary, code)) => {
            let _ = writeln!(std::io::stdout(), "{summary}");
            code
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
