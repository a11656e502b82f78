//! `twistlab` command-line driver.
//!
//! Exit codes: 0 success, 2 usage, 3 invalid parameter, 4 runtime failure.

mod args;
mod commands;
mod config;
mod output;

use std::process::ExitCode;

use config::ParseError;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match config::parse(std::env::args_os().collect()) {
        Ok(cli) => cli,
        Err(ParseError::Clap(e)) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
        Err(e @ ParseError::Config(_)) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match commands::execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
