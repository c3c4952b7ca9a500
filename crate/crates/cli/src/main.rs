//! `ipiqa`: command-line entry point for the ipiqa pipelines.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime or data error.

mod args;
mod commands;
mod error;
mod resolve;

use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use serde_json::json;

use args::{Cli, Command};
use error::CliError;

fn run(cli: Cli) -> Result<serde_json::Value, CliError> {
    let common = &cli.common;
    let outcome = match cli.command {
        Command::GenData(a) => commands::gen_data(a, common, false)?,
        Command::Filter(a) => commands::filter(a, common, false)?,
        Command::Pretrain(a) => commands::pretrain(a, common, false)?,
        Command::Train(a) => commands::train(a, common, false)?,
        Command::Eval(a) => commands::eval(a, common, false)?,
        Command::Protocol(a) => commands::protocol(a, common, false)?,
        Command::Attnmap(a) => commands::attnmap(a, common, false)?,
        Command::DumpConfig(a) => {
            let outcome = match a.command.as_str() {
                "gen-data" => commands::gen_data(Default::default(), common, true)?,
                "filter" => commands::filter(Default::default(), common, true)?,
                "pretrain" => commands::pretrain(Default::default(), common, true)?,
                "train" => commands::train(Default::default(), common, true)?,
                "eval" => commands::eval(Default::default(), common, true)?,
                "protocol" => commands::protocol(Default::default(), common, true)?,
                "attnmap" => commands::attnmap(Default::default(), common, true)?,
                other => unreachable!("clap admits only listed commands, got {other}"),
            };
            return Ok(outcome.config.into());
        }
    };
    Ok(json!({ "config": outcome.config, "result": outcome.result }))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            // --help and --version print to stdout and succeed.
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let name = cli.command.name();
    match run(cli) {
        Ok(value) => {
            let text = serde_json::to_string_pretty(&value).expect("JSON values serialize");
            let mut out = std::io::stdout().lock();
            match writeln!(out, "{text}").and_then(|()| out.flush()) {
                // A closed reader is not our failure.
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
                    eprintln!("error: writing the result: {e}");
                    ExitCode::from(2)
                }
                _ => ExitCode::SUCCESS,
            }
        }
        Err(e) => {
            eprintln!("{name}: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
