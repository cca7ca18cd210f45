use std::error::Error as _;
use std::process::ExitCode;

use clap::Parser;
use mbsts_cli::args::{execute, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(manifest) => {
            if let Some(dir) = &manifest.config.output {
                eprintln!("wrote {} ({:.2}s)", dir.display(), manifest.wall_clock_seconds);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = e.source();
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
