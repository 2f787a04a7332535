//! `gwa`: command-line front end for group window attention scheduling.

mod args;
mod commands;
mod help;

use std::process::ExitCode;

use clap::{CommandFactory, Parser};

use args::{Cli, Command};

/// Exit status when `verify` finds a mismatch.
const EXIT_MISMATCH: u8 = 1;
/// Exit status for invalid input or I/O failure (clap uses the same code).
const EXIT_ERROR: u8 = 2;

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    if cli.help_json {
        commands::emit(&commands::to_json(&help::describe(Cli::command()))?)?;
        return Ok(ExitCode::SUCCESS);
    }
    let Some(command) = cli.command else {
        Cli::command().print_help()?;
        return Ok(ExitCode::from(EXIT_ERROR));
    };
    let (output, pass) = match &command {
        Command::Mask(a) => (commands::mask(a)?, true),
        Command::Windows(a) => (commands::windows(a)?, true),
        Command::Group(a) => (commands::group(a)?, true),
        Command::Verify(a) => {
            let v = commands::verify(a)?;
            (v.output, v.pass)
        }
        Command::Simulate(a) => (commands::simulate(a)?, true),
    };
    commands::emit(&output)?;
    Ok(if pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_MISMATCH)
    })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
