//! Dataset container format, synthetic datasets, augmentation and batching.
//!
//! On-disk layout of a dataset directory:
//!
//! ```text
//! meta.json            task kind, K, C/H/W, split sizes, normalization constants
//! train_images.bin     N*C*H*W unsigned bytes, row-major
//! train_labels.bin     multiclass: 1 byte per sample; multilabel: K bytes per sample
//! val_images.bin / val_labels.bin / test_images.bin / test_labels.bin
//! ```

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::model::{HeadKind, Task};
use crate::rng::{sample_coin, stream, Purpose};
use crate::tensor::Tensor;

pub const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for SplitName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            other => Err(Error::InvalidArgument(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Normalization {
    pub fn uniform(channels: usize, mean: f32, std: f32) -> Self {
        Self {
            mean: vec![mean; channels],
            std: vec![std; channels],
        }
    }
}

/// One split: raw pixels plus labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub n: usize,
    /// `n * C * H * W` bytes.
    pub images: Vec<u8>,
    /// `n` class indices (multiclass) or `n * K` binary bytes (multilabel).
    pub labels: Vec<u8>,
}

impl Split {
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub task: Task,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub train: Split,
    pub val: Split,
    pub test: Split,
    pub normalization: Normalization,
}

/// Labels of a gathered batch.
#[derive(Clone, Debug, PartialEq)]
pub enum BatchLabels {
    Classes(Vec<usize>),
    /// `[N, K]` tensor of 0/1.
    Binary(Tensor),
}

impl Dataset {
    pub fn split(&self, name: SplitName) -> &Split {
        match name {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }

    pub fn sample_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    fn label_len(&self) -> usize {
        match self.task.kind {
            HeadKind::Multiclass => 1,
            HeadKind::Multilabel => self.task.classes,
        }
    }

    /// Normalized `[N, C, H, W]` batch for the given sample indices.
    pub fn gather_images(&self, split: &Split, indices: &[usize]) -> Result<Tensor> {
        let len = self.sample_len();
        let mut bytes = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            bytes.extend_from_slice(&split.images[i * len..(i + 1) * len]);
        }
        normalize(
            &bytes,
            &[indices.len(), self.channels, self.height, self.width],
            &self.normalization,
        )
    }

    pub fn gather_labels(&self, split: &Split, indices: &[usize]) -> BatchLabels {
        match self.task.kind {
            HeadKind::Multiclass => {
                BatchLabels::Classes(indices.iter().map(|&i| split.labels[i] as usize).collect())
            }
            HeadKind::Multilabel => {
                let k = self.task.classes;
                let mut data = Vec::with_capacity(indices.len() * k);
                for &i in indices {
                    data.extend(split.labels[i * k..(i + 1) * k].iter().map(|&b| b as f32));
                }
                BatchLabels::Binary(Tensor::from_parts(vec![indices.len(), k], data))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.task.classes == 0 || self.sample_len() == 0 {
            return Err(Error::Meta("class count and image extents must be >= 1".into()));
        }
        if self.task.kind == HeadKind::Multiclass && self.task.classes > 256 {
            return Err(Error::Meta("multiclass labels are single bytes (K <= 256)".into()));
        }
        let norm = &self.normalization;
        if norm.mean.len() != self.channels || norm.std.len() != self.channels {
            return Err(Error::Meta(format!(
                "normalization needs {} channel values",
                self.channels
            )));
        }
        if norm.std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Meta("normalization std must be > 0".into()));
        }
        for (name, split) in SPLIT_NAMES.iter().zip([&self.train, &self.val, &self.test]) {
            if split.images.len() != split.n * self.sample_len()
                || split.labels.len() != split.n * self.label_len()
            {
                return Err(Error::Meta(format!("split `{name}` has inconsistent sizes")));
            }
            let path = PathBuf::from(format!("{name}_labels.bin"));
            check_labels(&split.labels, self.task, self.label_len(), &path)?;
        }
        Ok(())
    }
}

fn check_labels(labels: &[u8], task: Task, label_len: usize, path: &Path) -> Result<()> {
    let bad = match task.kind {
        HeadKind::Multiclass => labels.iter().position(|&l| l as usize >= task.classes),
        HeadKind::Multilabel => labels.iter().position(|&l| l > 1),
    };
    match bad {
        Some(pos) => Err(Error::LabelDomain {
            path: path.to_path_buf(),
            sample: pos / label_len,
            value: labels[pos],
        }),
        None => Ok(()),
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    task: HeadKind,
    classes: usize,
    channels: usize,
    height: usize,
    width: usize,
    splits: MetaSplits,
    normalization: Normalization,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaSplits {
    train: usize,
    val: usize,
    test: usize,
}

pub fn save_dataset(data: &Dataset, dir: &Path) -> Result<()> {
    data.validate()?;
    fs::create_dir_all(dir)?;
    let meta = Meta {
        task: data.task.kind,
        classes: data.task.classes,
        channels: data.channels,
        height: data.height,
        width: data.width,
        splits: MetaSplits {
            train: data.train.n,
            val: data.val.n,
            test: data.test.n,
        },
        normalization: data.normalization.clone(),
    };
    let mut text = serde_json::to_string_pretty(&meta)?;
    text.push('\n');
    fs::write(dir.join("meta.json"), text)?;
    for (name, split) in SPLIT_NAMES.iter().zip([&data.train, &data.val, &data.test]) {
        fs::write(dir.join(format!("{name}_images.bin")), &split.images)?;
        fs::write(dir.join(format!("{name}_labels.bin")), &split.labels)?;
    }
    Ok(())
}

fn read_exact_file(path: &Path, expected: u64) -> Result<Vec<u8>> {
    let md = fs::metadata(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
    if md.len() != expected {
        return Err(Error::SizeMismatch {
            path: path.to_path_buf(),
            expected,
            actual: md.len(),
        });
    }
    Ok(fs::read(path)?)
}

/// Loads and fully validates a dataset directory.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let meta_path = dir.join("meta.json");
    let text =
        fs::read_to_string(&meta_path).map_err(|_| Error::MissingFile(meta_path.clone()))?;
    let meta: Meta =
        serde_json::from_str(&text).map_err(|e| Error::Meta(format!("meta.json: {e}")))?;
    let task = Task {
        kind: meta.task,
        classes: meta.classes,
    };
    let sample = (meta.channels * meta.height * meta.width) as u64;
    let label_len = match task.kind {
        HeadKind::Multiclass => 1,
        HeadKind::Multilabel => task.classes as u64,
    };
    let mut splits = Vec::with_capacity(3);
    for (name, n) in SPLIT_NAMES
        .iter()
        .zip([meta.splits.train, meta.splits.val, meta.splits.test])
    {
        let images = read_exact_file(&dir.join(format!("{name}_images.bin")), n as u64 * sample)?;
        let labels_path = dir.join(format!("{name}_labels.bin"));
        let labels = read_exact_file(&labels_path, n as u64 * label_len)?;
        check_labels(&labels, task, label_len as usize, &labels_path)?;
        splits.push(Split { n, images, labels });
    }
    let test = splits.pop().expect("three splits");
    let val = splits.pop().expect("three splits");
    let train = splits.pop().expect("three splits");
    let data = Dataset {
        task,
        channels: meta.channels,
        height: meta.height,
        width: meta.width,
        train,
        val,
        test,
        normalization: meta.normalization,
    };
    data.validate()?;
    Ok(data)
}

/// `(x / 255 - mean[c]) / std[c]` for a `[N, C, H, W]` byte batch.
pub fn normalize(pixels: &[u8], shape: &[usize], norm: &Normalization) -> Result<Tensor> {
    if shape.len() != 4 || shape.iter().product::<usize>() != pixels.len() {
        return Err(shape_err(format!(
            "normalize: {} pixels for shape {shape:?}",
            pixels.len()
        )));
    }
    let (c, plane) = (shape[1], shape[2] * shape[3]);
    if norm.mean.len() != c || norm.std.len() != c {
        return Err(shape_err(format!(
            "normalize: {c} channels but {} / {} constants",
            norm.mean.len(),
            norm.std.len()
        )));
    }
    if norm.std.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::InvalidArgument("normalize: std must be > 0".into()));
    }
    let data = pixels
        .iter()
        .enumerate()
        .map(|(idx, &p)| {
            let ch = (idx / plane) % c;
            (p as f32 / 255.0 - norm.mean[ch]) / norm.std[ch]
        })
        .collect();
    Ok(Tensor::from_parts(shape.to_vec(), data))
}

/// Mirrors one sample `[C, H, W]` along its width, in place.
fn flip_sample(sample: &mut [f32], width: usize) {
    for row in sample.chunks_exact_mut(width) {
        row.reverse();
    }
}

/// Horizontally flips each sample of a `[N, C, H, W]` batch with probability `prob`.
pub fn augment_flip<R: Rng + ?Sized>(batch: &mut Tensor, prob: f64, rng: &mut R) -> Result<()> {
    augment_flip_with(batch, |_| rng.gen::<f64>() < prob)
}

/// Flips sample `s` of the batch whenever `decide(s)` is true.
pub fn augment_flip_with(batch: &mut Tensor, mut decide: impl FnMut(usize) -> bool) -> Result<()> {
    batch.expect_rank(4, "augment_flip batch")?;
    let width = batch.shape()[3];
    let sample_len = batch.len() / batch.shape()[0];
    for (s, sample) in batch.data_mut().chunks_exact_mut(sample_len).enumerate() {
        if decide(s) {
            flip_sample(sample, width);
        }
    }
    Ok(())
}

/// Flip decision for dataset sample `sample` in `epoch`; independent of batch composition.
pub fn flip_decision(seed: u64, epoch: usize, sample: usize, prob: f64) -> bool {
    sample_coin(seed, epoch as u64, sample, prob)
}

/// Fisher-Yates shuffled index batches; the final partial batch is kept.
pub fn batch_iter(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be >= 1");
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = stream(seed, Purpose::Shuffle, epoch as u64);
    order.shuffle(&mut rng);
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    /// Class-conditional Gaussian spot position and scale.
    GaussBlobs,
    /// Class-conditional stripe orientation and frequency.
    StripedTextures,
}

impl std::str::FromStr for SynthKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gauss_blobs" => Ok(SynthKind::GaussBlobs),
            "striped_textures" => Ok(SynthKind::StripedTextures),
            other => Err(Error::InvalidArgument(format!("unknown synth kind `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    /// 70/15/15: val and test get `floor(0.15 * n)` each, the remainder goes to train.
    pub fn from_total(n: usize) -> Self {
        let held = n * 15 / 100;
        Self {
            train: n - 2 * held,
            val: held,
            test: held,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub classes: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub sizes: SplitSizes,
    pub seed: u64,
    #[serde(default)]
    pub multilabel: bool,
    /// Standard deviation of additive pixel noise, in 0-255 units.
    #[serde(default = "default_noise")]
    pub noise_std: f64,
    /// Striped textures only: half-width of the per-sample orientation jitter,
    /// as a fraction of the spacing between class orientations.
    #[serde(default = "default_jitter")]
    pub orientation_jitter: f64,
}

fn default_noise() -> f64 {
    20.0
}

fn default_jitter() -> f64 {
    0.25
}

impl SynthSpec {
    /// `per_class * classes` samples split 70/15/15.
    pub fn new(
        kind: SynthKind,
        per_class: usize,
        classes: usize,
        input: [usize; 3],
        seed: u64,
    ) -> Self {
        Self {
            kind,
            classes,
            channels: input[0],
            height: input[1],
            width: input[2],
            sizes: SplitSizes::from_total(per_class * classes),
            seed,
            multilabel: false,
            noise_std: default_noise(),
            orientation_jitter: default_jitter(),
        }
    }
}

/// Deterministic synthetic dataset. Classes are balanced round-robin before shuffling.
pub fn synth_make(spec: &SynthSpec) -> Result<Dataset> {
    if spec.classes == 0 || spec.channels == 0 || spec.height == 0 || spec.width == 0 {
        return Err(Error::InvalidArgument("synth parameters must be positive".into()));
    }
    if spec.sizes.total() == 0 {
        return Err(Error::InvalidArgument("synth dataset would be empty".into()));
    }
    if !spec.multilabel && spec.classes > 256 {
        return Err(Error::InvalidArgument("at most 256 classes".into()));
    }
    let task = if spec.multilabel {
        Task::multilabel(spec.classes)
    } else {
        Task::multiclass(spec.classes)
    };
    let total = spec.sizes.total();
    let mut rng = stream(spec.seed, Purpose::Synth, 0);
    let noise = Normal::new(0.0, spec.noise_std.max(0.0))
        .map_err(|e| Error::InvalidArgument(format!("noise_std: {e}")))?;
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut rng);

    let sample_len = spec.channels * spec.height * spec.width;
    let mut images = Vec::with_capacity(total * sample_len);
    let mut labels = Vec::new();
    let mut field = vec![0.0f64; spec.height * spec.width];
    for &slot in &order {
        let active: Vec<usize> = if spec.multilabel {
            (0..spec.classes).filter(|_| rng.gen_bool(0.5)).collect()
        } else {
            vec![slot % spec.classes]
        };
        field.fill(0.0);
        match spec.kind {
            SynthKind::StripedTextures => {
                for &c in &active {
                    add_stripes(&mut field, spec, c, &mut rng);
                }
            }
            SynthKind::GaussBlobs => {
                for &c in &active {
                    add_blob(&mut field, spec, c, &mut rng);
                }
            }
        }
        for ch in 0..spec.channels {
            let gain = 1.0 - 0.15 * ch as f64;
            for &v in &field {
                let px = 128.0 + gain * v + noise.sample(&mut rng);
                images.push(px.round().clamp(0.0, 255.0) as u8);
            }
        }
        if spec.multilabel {
            labels.extend((0..spec.classes).map(|c| active.contains(&c) as u8));
        } else {
            labels.push(active[0] as u8);
        }
    }

    let label_len = if spec.multilabel { spec.classes } else { 1 };
    let mut take = {
        let mut start = 0usize;
        move |n: usize| {
            let split = Split {
                n,
                images: images[start * sample_len..(start + n) * sample_len].to_vec(),
                labels: labels[start * label_len..(start + n) * label_len].to_vec(),
            };
            start += n;
            split
        }
    };
    let train = take(spec.sizes.train);
    let val = take(spec.sizes.val);
    let test = take(spec.sizes.test);
    let data = Dataset {
        task,
        channels: spec.channels,
        height: spec.height,
        width: spec.width,
        train,
        val,
        test,
        normalization: Normalization::uniform(spec.channels, 0.5, 0.5),
    };
    data.validate()?;
    Ok(data)
}

fn add_stripes<R: Rng>(field: &mut [f64], spec: &SynthSpec, class: usize, rng: &mut R) {
    // Orientation classes are spread over [0, pi/2] and randomly mirrored
    // (theta -> pi - theta), so a horizontal flip never changes the class.
    // Classes beyond the first orientation cycle also differ in frequency band.
    let n_orient = spec.classes.clamp(1, 6);
    let step = if n_orient > 1 {
        PI / 2.0 / (n_orient - 1) as f64
    } else {
        0.0
    };
    let base = (class % n_orient) as f64 * step;
    let band = (class / n_orient) as f64;
    let jitter = if n_orient > 1 {
        step * spec.orientation_jitter
    } else {
        PI / 16.0
    };
    let mut theta = base + rng.gen_range(-jitter..=jitter);
    if rng.gen_bool(0.5) {
        theta = PI - theta;
    }
    let freq = (0.12 + 0.08 * band) * rng.gen_range(0.85..=1.15);
    let phase = rng.gen_range(0.0..2.0 * PI);
    let amp = rng.gen_range(35.0..=60.0);
    let (s, c) = theta.sin_cos();
    for y in 0..spec.height {
        for x in 0..spec.width {
            let t = x as f64 * c + y as f64 * s;
            field[y * spec.width + x] += amp * (2.0 * PI * freq * t + phase).sin();
        }
    }
}

fn add_blob<R: Rng>(field: &mut [f64], spec: &SynthSpec, class: usize, rng: &mut R) {
    let (h, w) = (spec.height as f64, spec.width as f64);
    let angle = 2.0 * PI * class as f64 / spec.classes as f64;
    let radius = 0.28 * h.min(w);
    let cy = h / 2.0 + radius * angle.sin() + rng.gen_range(-1.5..=1.5);
    let cx = w / 2.0 + radius * angle.cos() + rng.gen_range(-1.5..=1.5);
    let sigma = (0.07 + 0.03 * (class % 3) as f64) * h.min(w);
    let amp = rng.gen_range(70.0..=110.0);
    for y in 0..spec.height {
        for x in 0..spec.width {
            let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
            field[y * spec.width + x] += amp * (-d2 / (2.0 * sigma * sigma)).exp();
        }
    }
}

/// Replaces a fraction `rate` of labels in `split`.
///
/// Multiclass: the label becomes a uniformly drawn different class.
/// Multilabel: each bit flips independently with probability `rate`.
/// Returns the number of samples whose labels changed.
pub fn corrupt_labels(split: &mut Split, task: Task, rate: f64, seed: u64) -> Result<usize> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("noise rate {rate} outside [0, 1]")));
    }
    let mut rng = stream(seed, Purpose::LabelNoise, 0);
    let mut changed = 0;
    match task.kind {
        HeadKind::Multiclass => {
            if task.classes < 2 {
                return Ok(0);
            }
            for label in &mut split.labels {
                if rng.gen::<f64>() < rate {
                    let mut other = rng.gen_range(0..task.classes - 1);
                    if other >= *label as usize {
                        other += 1;
                    }
                    *label = other as u8;
                    changed += 1;
                }
            }
        }
        HeadKind::Multilabel => {
            for sample in split.labels.chunks_exact_mut(task.classes) {
                let mut touched = false;
                for bit in sample {
                    if rng.gen::<f64>() < rate {
                        *bit ^= 1;
                        touched = true;
                    }
                }
                changed += touched as usize;
            }
        }
    }
    Ok(changed)
}
