use std::path::Path;

use anyhow::{bail, Context, Result};
use inmerge_core::checkpoint::load_model;
use inmerge_core::data::{Dataset, SplitName};
use inmerge_core::metrics::roc_points;
use inmerge_core::model::Model;
use inmerge_core::train::{class_truth, evaluate, predict};
use serde::Serialize;

use crate::failure::Category;
use crate::open_dataset;

#[derive(Serialize)]
struct RocRow {
    class: usize,
    threshold: f64,
    fpr: f64,
    tpr: f64,
}

pub fn run(checkpoint: &Path, data_dir: &Path, split: SplitName, roc_out: Option<&Path>) -> Result<()> {
    let (model, _) = load_model(checkpoint)
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))
        .context(Category::Data)?;
    let data = open_dataset(data_dir)?;
    check_match(&model, &data).context(Category::Data)?;
    let split_data = data.split(split);
    let bundle = evaluate(&model, &data, split_data)?;
    println!("{}", serde_json::to_string_pretty(&bundle)?);

    if let Some(path) = roc_out {
        let pred = predict(&model, &data, split_data)?;
        let k = pred.classes;
        let mut w = csv::Writer::from_path(path)
            .with_context(|| format!("creating {}", path.display()))?;
        for class in 0..k {
            let scores: Vec<f64> = pred.scores.iter().skip(class).step_by(k).copied().collect();
            let truth = class_truth(&data, split_data, class);
            for (threshold, fpr, tpr) in roc_points(&scores, &truth) {
                w.serialize(RocRow {
                    class,
                    threshold,
                    fpr,
                    tpr,
                })?;
            }
        }
        w.flush()?;
    }
    Ok(())
}

fn check_match(model: &Model, data: &Dataset) -> Result<()> {
    let (m, d) = (model.task(), data.task);
    if m != d {
        bail!(
            "checkpoint has a {:?} head with {} classes, dataset is {:?} with {} classes",
            m.kind,
            m.classes,
            d.kind,
            d.classes
        );
    }
    if model.input_shape() != data.input_shape() {
        bail!(
            "checkpoint expects inputs {:?}, dataset images are {:?}",
            model.input_shape(),
            data.input_shape()
        );
    }
    Ok(())
}
