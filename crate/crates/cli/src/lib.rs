//! Command-line front end: reads mesh/model/observation files, runs one
//! operation of `bvfield`, and writes headed CSV, JSON and coordinate-format
//! matrix files.

pub mod args;
pub mod commands;
pub mod error;
pub mod io;

pub use args::{Cli, Command};
pub use commands::run;
pub use error::{CliError, CliResult};

/// Parses `argv`, runs it, reports errors on stderr and returns the exit code.
pub fn main_with(argv: Vec<String>) -> i32 {
    use clap::Parser;
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let command_line = std::iter::once("bvfield")
        .chain(argv.iter().skip(1).map(String::as_str))
        .collect::<Vec<_>>()
        .join(" ");
    match run(&cli, &command_line) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("bvfield {}: {e}", cli.command.name());
            e.exit_code()
        }
    }
}
