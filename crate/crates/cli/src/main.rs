use clap::Parser;

fn main() -> anyhow::Result<()> {
    prepline_cli::run(prepline_cli::Cli::parse())
}
