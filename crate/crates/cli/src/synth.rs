use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use inmerge_core::data::{corrupt_labels, save_dataset, synth_make, SplitSizes, SynthKind, SynthSpec};

use crate::failure::Category;

#[derive(Args)]
pub struct SynthArgs {
    /// `gauss_blobs` or `striped_textures`
    #[arg(long)]
    kind: SynthKind,
    #[arg(long)]
    classes: usize,
    /// Samples per class, split 70/15/15 (ignored if --train is given)
    #[arg(long, default_value_t = 100)]
    per_class: usize,
    /// Explicit split sizes; all three must be given together
    #[arg(long, requires_all = ["val", "test"])]
    train: Option<usize>,
    #[arg(long, requires = "train")]
    val: Option<usize>,
    #[arg(long, requires = "train")]
    test: Option<usize>,
    #[arg(long, default_value_t = 1)]
    channels: usize,
    /// Image height and width
    #[arg(long, default_value_t = 28)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Pixel noise standard deviation, 0-255 scale
    #[arg(long)]
    noise: Option<f64>,
    /// Orientation jitter as a fraction of class spacing (striped textures)
    #[arg(long)]
    jitter: Option<f64>,
    #[arg(long)]
    multilabel: bool,
    /// Fraction of training labels to corrupt; validation and test stay clean
    #[arg(long, default_value_t = 0.0)]
    label_noise: f64,
    #[arg(long)]
    out: PathBuf,
}

pub fn run(args: &SynthArgs) -> Result<()> {
    let mut spec = SynthSpec::new(
        args.kind,
        args.per_class,
        args.classes,
        [args.channels, args.size, args.size],
        args.seed,
    );
    if let (Some(train), Some(val), Some(test)) = (args.train, args.val, args.test) {
        spec.sizes = SplitSizes { train, val, test };
    }
    spec.multilabel = args.multilabel;
    if let Some(noise) = args.noise {
        spec.noise_std = noise;
    }
    if let Some(jitter) = args.jitter {
        spec.orientation_jitter = jitter;
    }
    let mut data = synth_make(&spec).context(Category::Config)?;
    if args.label_noise > 0.0 {
        let task = data.task;
        corrupt_labels(&mut data.train, task, args.label_noise, args.seed)
            .context(Category::Config)?;
    }
    save_dataset(&data, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    eprintln!(
        "wrote {} ({} / {} / {} samples)",
        args.out.display(),
        data.train.n,
        data.val.n,
        data.test.n
    );
    Ok(())
}
