//! One training run and its output directory.
//!
//! Files written:
//!
//! | file                  | content                                         |
//! |-----------------------|-------------------------------------------------|
//! | `config.toml`         | resolved configuration, every default explicit  |
//! | `log.jsonl`           | one record per epoch, then a final summary      |
//! | `merge_reports.jsonl` | one record per sweep (empty for baseline runs)  |
//! | `final.ckpt`          | weights after the last epoch                    |
//! | `best.ckpt`           | weights with the best validation metric         |
//! | `summary.json`        | best epoch, validation metric, test metrics     |
//! | `timing.json`         | wall-clock seconds per epoch                    |
//!
//! Everything except `timing.json` is a deterministic function of the
//! configuration and the dataset.

use std::cell::RefCell;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::rc::Rc;
use std::time::Instant;

use anyhow::{Context, Result};
use inmerge_core::checkpoint::save_model;
use inmerge_core::data::Dataset;
use inmerge_core::metrics::MetricBundle;
use inmerge_core::train::{evaluate, selection_metric, Trainer};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::failure::Category;

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub tag: String,
    pub best_epoch: Option<usize>,
    pub best_val_metric: Option<f64>,
    pub test: MetricBundle,
    pub test_metric: f64,
}

/// Trains per `cfg` on `data`, writing every artifact into `out`.
/// `quiet` suppresses the per-epoch progress lines on stderr.
pub fn train_into(cfg: &RunConfig, data: &Dataset, out: &Path, quiet: bool) -> Result<RunSummary> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let train_cfg = cfg.train_config();
    let arch = cfg.arch.for_dataset(data);
    fs::write(out.join("config.toml"), cfg.to_toml()?)?;

    let mut trainer = Trainer::new(&arch, data, train_cfg.clone()).context(Category::Config)?;
    let sweeps: Rc<RefCell<Vec<u8>>> = Rc::default();
    {
        let sink = Rc::clone(&sweeps);
        trainer.on_sweep(move |epoch, batch, report| {
            let line = json!({
                "epoch": epoch,
                "batch": batch,
                "layers": report.layers,
                "degenerate_layers": report.degenerate_layers,
            });
            let mut buf = sink.borrow_mut();
            // writing into a Vec cannot fail
            let _ = writeln!(buf, "{line}");
        });
    }

    let mut timing = Vec::new();
    while !trainer.is_done() {
        let start = Instant::now();
        let rec = trainer.run_epoch()?;
        timing.push(start.elapsed().as_secs_f64());
        if !quiet {
            eprintln!(
                "epoch {:>3} {:?} lr {:.2e} train loss {:.4} val loss {:.4} val metric {:.4}{}",
                rec.epoch,
                rec.phase,
                rec.lr,
                rec.train_loss,
                rec.val_loss,
                rec.val_metric,
                rec.merge
                    .as_ref()
                    .map(|m| format!(" merges {}", m.merges))
                    .unwrap_or_default()
            );
        }
    }

    let final_model = trainer.state().model.clone();
    let (best, log) = trainer.finish();
    fs::write(out.join("log.jsonl"), log.to_jsonl()?)?;
    fs::write(out.join("merge_reports.jsonl"), sweeps.borrow().as_slice())?;
    save_model(&out.join("final.ckpt"), &final_model, Some(&train_cfg))?;
    save_model(&out.join("best.ckpt"), &best, Some(&train_cfg))?;

    let test = evaluate(&best, data, &data.test)?;
    let summary = RunSummary {
        tag: log.tag.clone(),
        best_epoch: log.best_epoch,
        best_val_metric: log.best_val_metric,
        test_metric: selection_metric(&test),
        test,
    };
    fs::write(
        out.join("summary.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    let total: f64 = timing.iter().sum();
    fs::write(
        out.join("timing.json"),
        serde_json::to_string_pretty(&json!({ "epoch_seconds": timing, "total_seconds": total }))?
            + "\n",
    )?;
    Ok(summary)
}
