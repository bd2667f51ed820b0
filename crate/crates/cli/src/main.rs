//! `qfa`: quantile factor extraction and Monte Carlo studies.

mod args;
mod error;
mod extract;
mod output;
mod simulate;

use clap::Parser;

use args::{Cli, Command};
use error::EXIT_CONFIG;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = match &cli.command {
        Command::Extract(a) => extract::run(a),
        Command::Simulate(a) => simulate::run(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
