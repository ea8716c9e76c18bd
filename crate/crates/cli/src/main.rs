use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = s3d_cli::Cli::parse();
    let mut stdout = std::io::stdout().lock();
    match s3d_cli::run(cli, &mut stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
