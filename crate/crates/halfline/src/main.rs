use std::process::ExitCode;

use clap::Parser;

use halfline::cli::{run_config, Cli};

fn main() -> ExitCode {
    let config = match Cli::parse().into_config() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("halfline: {e}");
            return ExitCode::from(2);
        }
    };
    let mut out = std::io::BufWriter::new(std::io::stdout());
    let result = run_config(&config, &mut out);
    if let Err(e) = std::io::Write::flush(&mut out) {
        eprintln!("halfline: {e}");
        return ExitCode::from(2);
    }
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("halfline: {e}");
            ExitCode::from(2)
        }
    }
}
