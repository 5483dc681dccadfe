use std::process::ExitCode;

use clap::Parser;

use fairdet_cli::{error_json, exit_code, run, Cli};
use fairdet_core::Error;

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let outcome = run(&cli).and_then(|artifact| match &cli.out {
        Some(path) => std::fs::write(path, &artifact).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        }),
        None => {
            print!("{artifact}");
            Ok(())
        }
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", error_json(&err));
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
