use std::process::ExitCode;

use clap::Parser;
use raterkit::cli::{run, Cli, EXIT_USAGE};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if !e.use_stderr() {
                e.exit();
            }
            let _ = e.print();
            return ExitCode::from(EXIT_USAGE as u8);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(EXIT_USAGE as u8);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("warning: could not configure thread pool: {e}");
        }
    }
    match run(cli.command) {
        Ok(outcome) => {
            for line in &outcome.summary {
                println!("{line}");
            }
            for w in &outcome.report.warnings {
                eprintln!("warning: {w}");
            }
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
