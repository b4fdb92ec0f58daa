use std::process::ExitCode;

use clap::Parser;

use stmpc::cli::{execute, exit_code, Cli, Outcome};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut log = std::io::stderr();
    match execute(&cli, &mut log) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::Failed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
