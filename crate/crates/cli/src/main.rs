use std::process::ExitCode;

use clap::Parser;

use renewal_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(report) => {
            println!("{}", report.summary);
            ExitCode::from(report.exit_code())
        }
        Err(e) => {
            eprintln!("renewal: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
