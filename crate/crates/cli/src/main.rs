use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Parser;
use wpt_charge::config::load_config;
use wpt_charge::experiment::{run_experiment, Preset, RunOptions};
use wpt_charge::ExperimentConfig;

/// Run a charging-control experiment and write its results as CSV.
#[derive(Debug, Parser)]
#[command(name = "wpt-sim", version)]
struct Args {
    /// fig3, fig4, fig5, fig6, fig7a, fig7b or custom.
    #[arg(long, value_parser = parse_preset)]
    preset: Preset,

    /// TOML config; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Trials per placement.
    #[arg(long)]
    trials: Option<usize>,

    #[arg(long)]
    out_dir: Option<PathBuf>,

    /// 15 placements x 10 trials instead of the desk-scale counts.
    #[arg(long)]
    paper_scale: bool,

    /// Also write per-block traces (custom preset).
    #[arg(long)]
    trace: bool,
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    s.parse().map_err(|e: wpt_charge::Error| e.to_string())
}

fn build_config(args: &Args) -> Result<ExperimentConfig> {
    let mut config = match &args.config {
        Some(path) => load_config(path).with_context(|| format!("loading {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if args.paper_scale {
        config = config.paper_scale();
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(trials) = args.trials {
        config.trials = trials;
    }
    if let Some(dir) = &args.out_dir {
        config.out_dir = dir.clone();
    }
    config.validate()?;
    Ok(config)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let config = build_config(&args)?;
    log::info!(
        "preset {} seed {} ({} placements x {} trials)",
        args.preset,
        config.seed,
        config.placements,
        config.trials
    );
    let options = RunOptions { trace: args.trace };
    for path in run_experiment(args.preset, &config, &options)? {
        println!("{}", path.display());
    }
    Ok(())
}
