//! `eventdehaze` command-line tool.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data or validation
//! errors. Human-readable messages go to stderr; every successful run writes
//! `<verb>.manifest` into `--out-dir`.

mod args;
mod kvflags;
mod manifest;
mod run;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::Cli;

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    ExitCode::from(dispatch(&argv))
}

fn dispatch(argv: &[String]) -> u8 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            eprint!("{}", e.render());
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match run::execute(cli, &argv[1..]) {
        Ok(manifest) => {
            eprintln!("wrote {}", manifest.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
