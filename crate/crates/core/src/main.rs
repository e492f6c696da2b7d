use clap::Parser;

fn main() -> anyhow::Result<()> {
    rmfa::cli::run(rmfa::cli::Cli::parse())
}
