use std::process::ExitCode;

use clap::Parser;
use noisy_ite::cli::{execute, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(s) => {
            println!(
                "run {} ({}): {} rows, {} solved now, {} failed or unconverged",
                s.run_id, s.mode, s.rows, s.computed, s.failed
            );
            if let Some(p) = &s.csv {
                println!("csv: {}", p.display());
            }
            if let Some(p) = &s.report {
                println!("report: {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
