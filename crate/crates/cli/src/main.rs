//! `inmerge`: train, evaluate, analyze and ablate in-model merging runs.

mod ablate;
mod analyze;
mod config;
mod eval;
mod failure;
mod run;
mod synth;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use inmerge_core::data::{load_dataset, Dataset, SplitName};

use crate::config::RunConfig;
use crate::failure::Category;

#[derive(Parser)]
#[command(name = "inmerge", version, about = "CNN training with in-model kernel merging")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pretrain + merge protocol described by a config file
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `output.dir`)
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
    /// Print metrics of a checkpoint on one dataset split
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: SplitName,
        /// Also write per-class ROC points to this CSV file
        #[arg(long)]
        roc_out: Option<PathBuf>,
    },
    /// Dump pairwise kernel similarities of one conv layer
    Analyze {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Conv layer ordinal, counting from 0
        #[arg(long)]
        layer: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a grid of trainings along one merge hyperparameter
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        axis: ablate::Axis,
        /// Comma-separated values; `none` disables merging for that cell
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic dataset directory
    Synth(synth::SynthArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(failure::exit_code(&err) as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Train { config, out, quiet } => {
            let cfg = RunConfig::load(&config)?;
            let out = output_dir(&cfg, out)?;
            let data = open_dataset(&cfg.data.dir)?;
            let summary = run::train_into(&cfg, &data, &out, quiet)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(())
        }
        Command::Eval {
            checkpoint,
            data,
            split,
            roc_out,
        } => eval::run(&checkpoint, &data, split, roc_out.as_deref()),
        Command::Analyze {
            checkpoint,
            layer,
            out,
        } => analyze::run(&checkpoint, layer, &out),
        Command::Ablate {
            config,
            axis,
            values,
            seeds,
            out,
        } => {
            let cfg = RunConfig::load(&config)?;
            let out = output_dir(&cfg, out)?;
            ablate::run(&cfg, axis, &values, &seeds, &out)
        }
        Command::Synth(args) => synth::run(&args),
    }
}

fn output_dir(cfg: &RunConfig, flag: Option<PathBuf>) -> Result<PathBuf> {
    flag.or_else(|| cfg.output.dir.clone())
        .context("no output directory: pass --out or set output.dir")
        .context(Category::Config)
}

pub(crate) fn open_dataset(dir: &Path) -> Result<Dataset> {
    load_dataset(dir)
        .with_context(|| format!("loading dataset {}", dir.display()))
        .context(Category::Data)
}
