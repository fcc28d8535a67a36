use std::process::ExitCode;

use clap::Parser;

mod commands;

use commands::Cli;

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<unidu_core::Error>() {
        Some(e) if !e.is_validation() => 2,
        Some(_) => 1,
        None if err.downcast_ref::<commands::UsageError>().is_some() => 1,
        None => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("UNIDU_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
