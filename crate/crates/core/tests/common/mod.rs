#![allow(dead_code)]

use inmerge_core::layers::LayerSpec;
use inmerge_core::model::{build_model, ArchConfig, HeadKind, Model};
use inmerge_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Three conv layers (4, 6, 8 kernels) over 1x6x6 inputs, then a dense head.
pub fn three_conv_arch() -> ArchConfig {
    ArchConfig {
        preset: None,
        layers: Some(vec![
            LayerSpec::conv3x3(1, 4),
            LayerSpec::Relu,
            LayerSpec::conv3x3(4, 6),
            LayerSpec::Relu,
            LayerSpec::conv3x3(6, 8),
            LayerSpec::Flatten,
            LayerSpec::Dense {
                in_features: 8 * 36,
                out_features: 2,
            },
        ]),
        input: [1, 6, 6],
        classes: 2,
        head: HeadKind::Multiclass,
    }
}

pub fn three_conv_model(seed: u64) -> Model {
    build_model(&three_conv_arch(), seed).unwrap()
}

/// Single conv layer of `n` kernels shaped `[c_in, 3, 3]`.
pub fn single_conv_model(n: usize, c_in: usize, seed: u64) -> Model {
    let arch = ArchConfig {
        preset: None,
        layers: Some(vec![
            LayerSpec::Conv2d {
                out_channels: n,
                in_channels: c_in,
                kernel_h: 3,
                kernel_w: 3,
                stride: 1,
                padding: 0,
            },
            LayerSpec::Flatten,
            LayerSpec::Dense {
                in_features: n,
                out_features: 2,
            },
        ]),
        input: [c_in, 3, 3],
        classes: 2,
        head: HeadKind::Multiclass,
    };
    build_model(&arch, seed).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], scale: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-scale..scale)).collect(),
    )
    .unwrap()
}

/// Tensor whose entries all satisfy `|x| >= margin`, so a step of `h < margin`
/// never crosses a ReLU kink.
pub fn tensor_away_from_zero(rng: &mut impl Rng, shape: &[usize], margin: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n)
            .map(|_| {
                let m = rng.gen_range(margin..1.0);
                if rng.gen_bool(0.5) {
                    m
                } else {
                    -m
                }
            })
            .collect(),
    )
    .unwrap()
}

/// Distinct values spaced by at least `gap`, in random order.
pub fn distinct_tensor(rng: &mut impl Rng, shape: &[usize], gap: f32) -> Tensor {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f32> = (0..n).map(|i| i as f32 * gap).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        vals.swap(i, j);
    }
    Tensor::new(shape.to_vec(), vals).unwrap()
}

/// `sum(weights * y)` accumulated in f64.
pub fn probe(y: &Tensor, weights: &Tensor) -> f64 {
    y.data()
        .iter()
        .zip(weights.data())
        .map(|(&a, &b)| a as f64 * b as f64)
        .sum()
}

/// Central finite-difference gradient of `f` with respect to every entry of `x`.
pub fn numeric_grad(x: &Tensor, h: f32, mut f: impl FnMut(&Tensor) -> f64) -> Vec<f64> {
    let mut probe_x = x.clone();
    (0..x.len())
        .map(|k| {
            let orig = x.data()[k];
            probe_x.data_mut()[k] = orig + h;
            let up = f(&probe_x);
            probe_x.data_mut()[k] = orig - h;
            let down = f(&probe_x);
            probe_x.data_mut()[k] = orig;
            // the step actually applied in f32
            let span = ((orig + h) as f64) - ((orig - h) as f64);
            (up - down) / span
        })
        .collect()
}

/// `||a - n|| / max(||a||, ||n||, 1e-12)`.
pub fn rel_err(analytic: &[f32], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let mut diff = 0.0;
    let mut na = 0.0;
    let mut nn = 0.0;
    for (&a, &n) in analytic.iter().zip(numeric) {
        let a = a as f64;
        diff += (a - n) * (a - n);
        na += a * a;
        nn += n * n;
    }
    diff.sqrt() / na.sqrt().max(nn.sqrt()).max(1e-12)
}

/// Brute-force Mann-Whitney AUROC: concordant pairs plus half the ties.
pub fn auroc_oracle(scores: &[f64], labels: &[bool]) -> f64 {
    let mut num = 0.0f64;
    let mut pairs = 0u64;
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1;
            if scores[i] > scores[j] {
                num += 1.0;
            } else if scores[i] == scores[j] {
                num += 0.5;
            }
        }
    }
    num / pairs as f64
}

use inmerge_core::data::{corrupt_labels, synth_make, Dataset, SplitSizes, SynthKind, SynthSpec};

/// Small striped-texture set for quick protocol runs.
pub fn small_stripes(train: usize, classes: usize, seed: u64) -> Dataset {
    let mut spec = SynthSpec::new(SynthKind::StripedTextures, 1, classes, [1, 28, 28], seed);
    spec.sizes = SplitSizes {
        train,
        val: train / 4,
        test: train / 4,
    };
    synth_make(&spec).unwrap()
}

/// 4,000 / 1,000 / 1,000 striped textures, six classes, 20% of training labels
/// replaced by a wrong class. Validation and test labels stay clean.
pub fn desk_dataset() -> Dataset {
    let mut spec = SynthSpec::new(SynthKind::StripedTextures, 1, 6, [1, 28, 28], 0);
    spec.sizes = SplitSizes {
        train: 4000,
        val: 1000,
        test: 1000,
    };
    spec.noise_std = 40.0;
    spec.orientation_jitter = 0.5;
    let mut data = synth_make(&spec).unwrap();
    let task = data.task;
    corrupt_labels(&mut data.train, task, 0.2, 0).unwrap();
    data
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
