use clap::error::ErrorKind;
use clap::Parser;
use narrator_cli::{execute, Cli, CliFailure};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            eprintln!("{}", CliFailure::new("args", e.to_string().trim_end()).to_line());
            std::process::exit(2);
        }
    };
    match execute(&cli.command) {
        Ok(summary) => {
            if !summary.text.is_empty() {
                println!("{}", summary.text.trim_end());
            }
            println!("config_hash={} seed={}", summary.config_hash, summary.seed);
        }
        Err(failure) => {
            eprintln!("{}", failure.to_line());
            std::process::exit(1);
        }
    }
}
