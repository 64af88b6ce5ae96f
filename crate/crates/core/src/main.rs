use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use tgmz::cli::{describe_checkpoint, parse_config, run_evaluate, run_train, Checkpoint};
use tgmz::data::{fuse_datasets, load_dataset, make_synthetic, save_dataset, SyntheticSpec};
use tgmz::eval::Setting;

#[derive(Parser)]
#[command(
    name = "tgmz",
    version,
    about = "Task-aligned generative meta-learning for zero-shot classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a TOML spec.
    GenData { spec: PathBuf, out: PathBuf },
    /// Fuse dataset directories into one, zero-padding attributes.
    Fuse {
        #[arg(required = true, num_args = 2..)]
        inputs: Vec<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Train from a run configuration.
    Train { config: PathBuf },
    /// Evaluate a checkpoint and append metrics to the run directory.
    Eval {
        config: PathBuf,
        checkpoint: PathBuf,
        #[arg(long)]
        setting: Setting,
        #[arg(long)]
        export_projection: bool,
    },
    /// Validate a checkpoint file and print its summary.
    Check { checkpoint: PathBuf },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::GenData { spec, out } => {
            let text = fs::read_to_string(&spec).with_context(|| format!("reading {}", spec.display()))?;
            let spec: SyntheticSpec = serde_path_to_error::deserialize(toml::Deserializer::parse(&text)?)
                .map_err(|e| anyhow::anyhow!("spec key `{}`: {}", e.path(), e.inner()))?;
            save_dataset(&make_synthetic(&spec)?, &out)?;
        }
        Command::Fuse { inputs, out } => {
            let sets = inputs
                .iter()
                .map(|p| load_dataset(p))
                .collect::<tgmz::Result<Vec<_>>>()?;
            let refs: Vec<_> = sets.iter().collect();
            save_dataset(&fuse_datasets(&refs)?, &out)?;
        }
        Command::Train { config } => {
            let cfg = parse_config(&config)?;
            let out = run_train(&cfg)?;
            println!("{}", out.checkpoint.display());
        }
        Command::Eval {
            config,
            checkpoint,
            setting,
            export_projection,
        } => {
            let cfg = parse_config(&config)?;
            let report = run_evaluate(&cfg, &checkpoint, setting, export_projection)?;
            for line in report.to_lines() {
                println!("{line}");
            }
        }
        Command::Check { checkpoint } => {
            print!("{}", describe_checkpoint(&Checkpoint::load(&checkpoint)?));
        }
    }
    Ok(())
}
