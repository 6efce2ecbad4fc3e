use std::process::ExitCode;

use clap::Parser;
use egp_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(s) => {
            println!(
                "final objective {}\niterations {}{}\ngrey fraction {}",
                s.final_objective,
                s.iterations,
                if s.converged { " (converged)" } else { "" },
                s.grey_fraction
            );
            for f in &s.files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
