mod args;
mod commands;
mod error;
mod manifest;
mod report;

use clap::Parser;

fn main() {
    let cli = args::Cli::parse();
    let root = commands::lab_root(cli.root);
    if let Err(e) = commands::execute(cli.command, &root) {
        eprintln!("error: {e}");
        std::process::exit(e.code);
    }
}
