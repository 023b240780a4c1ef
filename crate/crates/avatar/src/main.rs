use std::process::ExitCode;

use clap::Parser;
use soda_avatar::cli::{run, Cli};
use soda_avatar::Exit;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut out = std::io::stdout().lock();
    match run(cli, &mut out) {
        Ok(()) => Exit::Ok.into(),
        Err(f) => {
            eprintln!("gatectl: {}", f.message);
            f.exit.into()
        }
    }
}
