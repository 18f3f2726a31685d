use std::process::ExitCode;

use clap::Parser;
use hazard_ctmc::args::Cli;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match hazard_ctmc::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
