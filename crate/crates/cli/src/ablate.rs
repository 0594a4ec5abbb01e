//! Hyperparameter grids.
//!
//! Every `(value, seed)` cell is an ordinary training run written to
//! `cells/<axis>=<value>/seed=<seed>/`. `runs.csv` lists every cell and
//! `summary.csv` aggregates each value over seeds (sample standard deviation,
//! 0 for a single seed).

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use clap::ValueEnum;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::failure::Category;
use crate::open_dataset;
use crate::run::{train_into, RunSummary};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    Alpha,
    P,
    Tau,
    #[value(name = "l_s")]
    LS,
    /// Threshold of the inverted gate (merge when similarity < value)
    #[value(name = "sim_inverted")]
    SimInverted,
}

impl Axis {
    fn name(self) -> &'static str {
        match self {
            Axis::Alpha => "alpha",
            Axis::P => "p",
            Axis::Tau => "tau",
            Axis::LS => "l_s",
            Axis::SimInverted => "sim_inverted",
        }
    }
}

/// Configuration of one cell; `value` of `none` disables merging.
pub fn cell_config(base: &RunConfig, axis: Axis, value: &str, seed: u64) -> Result<RunConfig> {
    let mut cfg = base.clone();
    cfg.train.seed = seed;
    let value = value.trim();
    if value.eq_ignore_ascii_case("none") {
        cfg.merge = None;
        return Ok(cfg);
    }
    let mut merge = base.merge.clone().unwrap_or_default();
    merge.seed = seed;
    let real = || -> Result<f64> {
        value
            .parse::<f64>()
            .map_err(|_| anyhow!("`{value}` is not a number"))
    };
    match axis {
        Axis::Alpha => merge.alpha = real()?,
        Axis::P => merge.p = real()?,
        Axis::Tau => merge.tau = real()?,
        Axis::LS => {
            merge.l_s = value
                .parse()
                .map_err(|_| anyhow!("`{value}` is not a layer count"))?
        }
        Axis::SimInverted => {
            merge.tau = real()?;
            merge.inverted = true;
        }
    }
    merge.validate()?;
    cfg.merge = Some(merge);
    Ok(cfg)
}

#[derive(Serialize)]
struct RunRow<'a> {
    value: &'a str,
    seed: u64,
    tag: &'a str,
    best_epoch: Option<usize>,
    best_val_metric: Option<f64>,
    test_metric: f64,
    test_accuracy: Option<f64>,
    test_mean_auroc: Option<f64>,
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    axis: &'a str,
    value: &'a str,
    runs: usize,
    test_metric_mean: f64,
    test_metric_std: f64,
    best_val_mean: f64,
    best_val_std: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn worker_threads() -> Result<usize> {
    match std::env::var("INMERGE_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(anyhow!("INMERGE_THREADS must be a positive integer, got `{v}`")),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

pub fn run(base: &RunConfig, axis: Axis, values: &[String], seeds: &[u64], out: &Path) -> Result<()> {
    let cells: Vec<(usize, u64, RunConfig, PathBuf)> = values
        .iter()
        .enumerate()
        .flat_map(|(v, value)| seeds.iter().map(move |&seed| (v, value, seed)))
        .map(|(v, value, seed)| {
            let cfg = cell_config(base, axis, value, seed)
                .with_context(|| format!("{} = {value}", axis.name()))
                .context(Category::Config)?;
            let dir = out
                .join("cells")
                .join(format!("{}={}", axis.name(), value.trim()))
                .join(format!("seed={seed}"));
            Ok((v, seed, cfg, dir))
        })
        .collect::<Result<_>>()?;
    let data = open_dataset(&base.data.dir)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_threads().context(Category::Config)?)
        .build()?;
    let results: Vec<RunSummary> = pool.install(|| {
        cells
            .par_iter()
            .map(|(v, seed, cfg, dir)| {
                let summary = train_into(cfg, &data, dir, true)
                    .with_context(|| format!("cell {}={} seed={seed}", axis.name(), values[*v]))?;
                eprintln!(
                    "{}={} seed={seed}: test metric {:.4}",
                    axis.name(),
                    values[*v].trim(),
                    summary.test_metric
                );
                Ok(summary)
            })
            .collect::<Result<_>>()
    })?;

    let mut runs = csv::Writer::from_path(out.join("runs.csv"))?;
    for ((v, seed, _, _), s) in cells.iter().zip(&results) {
        runs.serialize(RunRow {
            value: values[*v].trim(),
            seed: *seed,
            tag: &s.tag,
            best_epoch: s.best_epoch,
            best_val_metric: s.best_val_metric,
            test_metric: s.test_metric,
            test_accuracy: s.test.accuracy,
            test_mean_auroc: s.test.mean_auroc,
        })?;
    }
    runs.flush()?;

    let mut summary = csv::Writer::from_path(out.join("summary.csv"))?;
    for (v, value) in values.iter().enumerate() {
        let of_value: Vec<&RunSummary> = cells
            .iter()
            .zip(&results)
            .filter(|((cv, ..), _)| *cv == v)
            .map(|(_, s)| s)
            .collect();
        let test: Vec<f64> = of_value.iter().map(|s| s.test_metric).collect();
        let val: Vec<f64> = of_value.iter().filter_map(|s| s.best_val_metric).collect();
        let (test_metric_mean, test_metric_std) = mean_std(&test);
        let (best_val_mean, best_val_std) = mean_std(&val);
        summary.serialize(SummaryRow {
            axis: axis.name(),
            value: value.trim(),
            runs: of_value.len(),
            test_metric_mean,
            test_metric_std,
            best_val_mean,
            best_val_std,
        })?;
    }
    summary.flush()?;
    println!("{}", out.join("summary.csv").display());
    Ok(())
}
