use clap::Parser;

fn main() -> anyhow::Result<()> {
    dumpy::cli::main_with(dumpy::cli::Cli::parse())
}
