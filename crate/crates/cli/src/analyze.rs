use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use inmerge_core::checkpoint::load_model;
use inmerge_core::merge::{similarity_stats, HISTOGRAM_BINS};
use serde::Serialize;
use serde_json::json;

use crate::failure::Category;

#[derive(Serialize)]
struct PairRow {
    i: usize,
    j: usize,
    /// Empty when either kernel has zero norm.
    sim: Option<f64>,
}

#[derive(Serialize)]
struct BinRow {
    lo: f64,
    hi: f64,
    count: u64,
}

/// Writes `pairs.csv` and `histogram.csv` into `out` and prints the summary.
pub fn run(checkpoint: &Path, layer: usize, out: &Path) -> Result<()> {
    let (model, _) = load_model(checkpoint)
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))
        .context(Category::Data)?;
    let stats = similarity_stats(&model, layer).context(Category::Config)?;
    fs::create_dir_all(out)?;

    let mut w = csv::Writer::from_path(out.join("pairs.csv"))?;
    for &(i, j, sim) in &stats.pairs {
        w.serialize(PairRow { i, j, sim })?;
    }
    w.flush()?;

    let width = 2.0 / HISTOGRAM_BINS as f64;
    let mut w = csv::Writer::from_path(out.join("histogram.csv"))?;
    for (b, &count) in stats.summary.histogram.iter().enumerate() {
        w.serialize(BinRow {
            lo: -1.0 + b as f64 * width,
            hi: -1.0 + (b + 1) as f64 * width,
            count,
        })?;
    }
    w.flush()?;

    let kernels = model.conv_weight(layer)?.shape()[0];
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "layer": layer,
            "kernels": kernels,
            "summary": stats.summary,
        }))?
    );
    Ok(())
}
