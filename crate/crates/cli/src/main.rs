use clap::Parser;

use dexp_cli::{run_command, Cli};

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let level = if cli.verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let cfg = cli.pipeline_config()?;
    run_command(cli.command, &cfg)
}
