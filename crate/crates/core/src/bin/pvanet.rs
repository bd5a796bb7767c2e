use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use pvanet::cli::{self, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli::configure_threads().and_then(|()| cli::run(&cli)) {
        Ok(out) => {
            let _ = std::io::stdout().write_all(out.as_bytes());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let code = e.exit_code();
            eprintln!("error: {:#}", anyhow::Error::from(e));
            ExitCode::from(code as u8)
        }
    }
}
