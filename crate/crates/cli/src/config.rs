//! Run configuration files.
//!
//! ```toml
//! [arch]
//! preset = "tiny_cnn"        # or an explicit [[arch.layers]] list
//!
//! [data]
//! dir = "data/stripes"       # relative paths resolve against this file
//!
//! [train]                    # every key optional
//! lr0 = 0.01
//! momentum = 0.9
//! weight_decay = 1e-4
//! gamma = 0.1
//! batch_size = 64
//! epochs_pretrain = 20
//! epochs_inmerge = 5
//! seed = 0
//! flip_prob = 0.5
//!
//! [merge]                    # omit the section for a baseline run
//! alpha = 0.8
//! p = 0.3
//! tau = 0.3
//! l_s = 0
//! # seed defaults to train.seed
//!
//! [output]
//! dir = "runs/stripes"
//! ```
//!
//! Unknown keys are rejected in every section.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use inmerge_core::data::Dataset;
use inmerge_core::layers::LayerSpec;
use inmerge_core::merge::MergeConfig;
use inmerge_core::model::ArchConfig;
use inmerge_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::failure::Category;

/// Architecture without the input shape and head, which come from the dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<LayerSpec>>,
}

impl ArchSection {
    pub fn for_dataset(&self, data: &Dataset) -> ArchConfig {
        ArchConfig {
            preset: self.preset.clone(),
            layers: self.layers.clone(),
            input: data.input_shape(),
            classes: data.task.classes,
            head: data.task.kind,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub dir: PathBuf,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    arch: ArchSection,
    data: DataSection,
    #[serde(default)]
    train: Option<toml::Table>,
    #[serde(default)]
    merge: Option<toml::Table>,
    #[serde(default)]
    output: OutputSection,
}

/// A parsed configuration with every default filled in. Serializing it
/// yields an equivalent, fully explicit file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub arch: ArchSection,
    pub data: DataSection,
    pub train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merge: Option<MergeConfig>,
    #[serde(default)]
    pub output: OutputSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))
            .context(Category::Config)?;
        let mut cfg = Self::parse(&text)
            .with_context(|| format!("in {}", path.display()))
            .context(Category::Config)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.data.dir = base.join(&cfg.data.dir);
        if let Some(dir) = &cfg.output.dir {
            cfg.output.dir = Some(base.join(dir));
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let raw: RawFile = toml::from_str(text)?;
        let train_table = raw.train.unwrap_or_default();
        if train_table.contains_key("merge") {
            bail!("merge settings belong in the [merge] section");
        }
        let train: TrainConfig = train_table.try_into().context("[train]")?;
        let merge = match raw.merge {
            None => None,
            Some(mut table) => {
                if !table.contains_key("seed") {
                    let seed = i64::try_from(train.seed)
                        .context("train.seed too large to inherit as merge.seed")?;
                    table.insert("seed".into(), toml::Value::Integer(seed));
                }
                Some(table.try_into::<MergeConfig>().context("[merge]")?)
            }
        };
        let cfg = Self {
            arch: raw.arch,
            data: raw.data,
            train,
            merge,
            output: raw.output,
        };
        cfg.train_config().validate()?;
        Ok(cfg)
    }

    /// The training configuration with the merge section folded in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            merge: self.merge.clone(),
            ..self.train.clone()
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}
