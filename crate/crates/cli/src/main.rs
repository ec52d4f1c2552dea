use std::process::ExitCode;

use clap::Parser;
use conceptcause_cli::{build_pipeline, exit_code, run_batch, service, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = if cli.stage == "serve" {
        build_pipeline(&cli).and_then(|p| service::serve_blocking(p, cli.port))
    } else {
        run_batch(&cli)
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
