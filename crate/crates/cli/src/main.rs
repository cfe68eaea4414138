//! Experiment command line: train a run from a config file, evaluate a
//! checkpoint greedily, or plot learning curves from seed metrics files.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use dave_core::config::{parse_override, TrainerConfig};
use dave_core::harness;
use dave_core::plot;

#[derive(Parser)]
#[command(name = "dave", about = "IGM-free cooperative multi-agent value decomposition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one training experiment from a config file.
    Train {
        /// Path to a `key = value` config file.
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Additional `key=value` overrides, applied in order.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Greedy evaluation of a saved checkpoint on an environment.
    Eval {
        /// Path to a checkpoint written by `train`.
        checkpoint: PathBuf,
        /// Environment name: matrix1, matrix2 or multistep.
        env: String,
        /// Number of evaluation episodes.
        #[arg(long, default_value_t = 32)]
        episodes: usize,
    },
    /// Render learning curves (median and interquartile band across seeds).
    Plot {
        /// Seed metrics CSV files from one experiment.
        metrics: Vec<PathBuf>,
        /// Output SVG path.
        #[arg(long)]
        out: PathBuf,
        /// Plot title.
        #[arg(long, default_value = "learning curve")]
        title: String,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train { config, seed, out, set } => {
            let text = std::fs::read_to_string(&config)
                .with_context(|| format!("reading config {}", config.display()))?;
            let mut cfg = TrainerConfig::from_text(&text)?;
            for s in &set {
                let (key, value) = parse_override(s)?;
                cfg.apply(&key, &value)?;
            }
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(out) = out {
                cfg.out_dir = out.display().to_string();
            }
            cfg.validate()?;
            let summary = harness::run(&cfg).map_err(|e| anyhow::anyhow!("{e}"))?;
            println!(
                "{} on {} seed {}: final return {:.3} (optimal: {}) after {} env steps, {} episodes",
                cfg.algorithm,
                cfg.env,
                cfg.seed,
                summary.final_return,
                summary.final_optimal,
                summary.env_steps,
                summary.episodes
            );
            println!("artifacts in {}", summary.out_dir.display());
        }
        Command::Eval { checkpoint, env, episodes } => {
            let (mean_return, optimal) = harness::eval_checkpoint(&checkpoint, &env, episodes)
                .map_err(|e| anyhow::anyhow!("{e}"))?;
            println!("greedy return {mean_return:.3} over {episodes} episodes (optimal: {optimal})");
        }
        Command::Plot { metrics, out, title } => {
            if metrics.is_empty() {
                bail!("plot requires at least one metrics file");
            }
            let paths: Vec<&std::path::Path> = metrics.iter().map(|p| p.as_path()).collect();
            plot::emit_plots(&paths, &out, &title).map_err(|e| anyhow::anyhow!("{e}"))?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}
