//! In-model kernel merging.
//!
//! A sweep visits every conv layer whose ordinal is at least `l_s`. For each
//! kernel `i` of such a layer it flips a Bernoulli(`p`) coin; on success it
//! draws a partner `j != i` uniformly from the same layer and, if the cosine
//! similarity of the two kernels exceeds `tau`, overwrites kernel `i` with
//! `alpha * K_i + (1 - alpha) * K_j`.
//!
//! Similarities and merge sources are always read from a snapshot of the
//! layer taken before the sweep touched it; only kernel `i` of the live
//! weights is written. Biases and non-conv parameters are never touched.
//!
//! Randomness is consumed in (layer, kernel) order: one uniform for the coin,
//! then one partner index only when the coin fires. Replaying the same stream
//! therefore reproduces the same draws regardless of `tau` or `alpha`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::model::Model;
use crate::tensor::Tensor;

/// Norms at or below this make a kernel ineligible for the similarity gate.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MergeConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub l_s: usize,
    #[serde(default)]
    pub seed: u64,
    /// Merge when `sim < tau` instead of `sim > tau`. Only for the dissimilar-merge ablation.
    #[serde(default, skip_serializing_if = "is_false")]
    pub inverted: bool,
}

fn default_alpha() -> f64 {
    0.8
}
fn default_p() -> f64 {
    0.3
}
fn default_tau() -> f64 {
    0.3
}
fn is_false(b: &bool) -> bool {
    !*b
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self {
            alpha: default_alpha(),
            p: default_p(),
            tau: default_tau(),
            l_s: 0,
            seed: 0,
            inverted: false,
        }
    }
}

impl MergeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidArgument(format!(
                "alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::InvalidArgument(format!(
                "p {} outside [0, 1]",
                self.p
            )));
        }
        if !(-1.0..=1.0).contains(&self.tau) {
            return Err(Error::InvalidArgument(format!(
                "tau {} outside [-1, 1]",
                self.tau
            )));
        }
        Ok(())
    }

    fn gate(&self, sim: f64) -> bool {
        if self.inverted {
            sim < self.tau
        } else {
            sim > self.tau
        }
    }
}

/// Counters for one conv layer in one sweep.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerMergeStats {
    pub ordinal: usize,
    pub considered: u64,
    pub draws: u64,
    pub gate_passes: u64,
    pub merges: u64,
    pub zero_norm: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MergeReport {
    pub layers: Vec<LayerMergeStats>,
    /// Eligible layers skipped because they hold a single kernel.
    pub degenerate_layers: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub similarities: Vec<f64>,
}

impl MergeReport {
    pub fn totals(&self) -> LayerMergeStats {
        let mut t = LayerMergeStats::default();
        for l in &self.layers {
            t.considered += l.considered;
            t.draws += l.draws;
            t.gate_passes += l.gate_passes;
            t.merges += l.merges;
            t.zero_norm += l.zero_norm;
        }
        t
    }

    pub fn merges(&self) -> u64 {
        self.layers.iter().map(|l| l.merges).sum()
    }

    pub fn accumulate(&mut self, other: &MergeReport) {
        for l in &other.layers {
            match self.layers.iter_mut().find(|m| m.ordinal == l.ordinal) {
                Some(m) => {
                    m.considered += l.considered;
                    m.draws += l.draws;
                    m.gate_passes += l.gate_passes;
                    m.merges += l.merges;
                    m.zero_norm += l.zero_norm;
                }
                None => self.layers.push(l.clone()),
            }
        }
        self.degenerate_layers += other.degenerate_layers;
    }
}

/// One partner draw, recorded for replay.
#[derive(Clone, Debug, PartialEq)]
pub struct MergeEvent {
    pub ordinal: usize,
    pub i: usize,
    pub j: usize,
    pub similarity: Option<f64>,
    pub applied: bool,
}

/// Row-major flattening of one kernel `[C_in, kh, kw]`.
pub fn vectorize_kernel(kernel: &Tensor) -> Vec<f32> {
    kernel.data().to_vec()
}

/// Cosine similarity clamped to `[-1, 1]`; `None` if either norm is `<= NORM_EPS`.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Option<f64> {
    assert_eq!(a.len(), b.len(), "cosine_similarity: length mismatch");
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let (na, nb) = (na.sqrt(), nb.sqrt());
    if na <= NORM_EPS || nb <= NORM_EPS {
        return None;
    }
    Some((dot / (na * nb)).clamp(-1.0, 1.0))
}

// Evaluated in f64 and rounded once, so identical kernels are an exact fixed point.
fn interpolate_into(dst: &mut [f32], k_i: &[f32], k_j: &[f32], alpha: f64) {
    for ((d, &a), &b) in dst.iter_mut().zip(k_i).zip(k_j) {
        *d = (alpha * a as f64 + (1.0 - alpha) * b as f64) as f32;
    }
}

/// `alpha * k_i + (1 - alpha) * k_j`, elementwise, rounded to `f32`.
pub fn merge_pair(k_i: &Tensor, k_j: &Tensor, alpha: f64) -> Result<Tensor> {
    if k_i.shape() != k_j.shape() {
        return Err(shape_err(format!(
            "merge_pair: {:?} vs {:?}",
            k_i.shape(),
            k_j.shape()
        )));
    }
    let mut out = k_i.clone();
    interpolate_into(out.data_mut(), k_i.data(), k_j.data(), alpha);
    Ok(out)
}

/// Runs one merge sweep over `model`, advancing `rng`.
pub fn inmerge_sweep<R: Rng + ?Sized>(
    model: &mut Model,
    cfg: &MergeConfig,
    rng: &mut R,
) -> MergeReport {
    sweep_impl(model, cfg, rng, None, false)
}

/// Same as [`inmerge_sweep`], also returning every partner draw and keeping
/// the sampled similarities in the report.
pub fn inmerge_sweep_traced<R: Rng + ?Sized>(
    model: &mut Model,
    cfg: &MergeConfig,
    rng: &mut R,
) -> (MergeReport, Vec<MergeEvent>) {
    let mut trace = Vec::new();
    let report = sweep_impl(model, cfg, rng, Some(&mut trace), true);
    (report, trace)
}

fn sweep_impl<R: Rng + ?Sized>(
    model: &mut Model,
    cfg: &MergeConfig,
    rng: &mut R,
    mut trace: Option<&mut Vec<MergeEvent>>,
    keep_similarities: bool,
) -> MergeReport {
    let mut report = MergeReport::default();
    let alpha = cfg.alpha;
    for ordinal in cfg.l_s..model.n_conv() {
        let weight = model.conv_weight_mut(ordinal).expect("ordinal in range");
        let n = weight.shape()[0];
        if n < 2 {
            report.degenerate_layers += 1;
            continue;
        }
        let klen = weight.len() / n;
        let snapshot = weight.data().to_vec();
        let kernel = |idx: usize| &snapshot[idx * klen..(idx + 1) * klen];
        let live = weight.data_mut();
        let mut stats = LayerMergeStats {
            ordinal,
            ..Default::default()
        };
        for i in 0..n {
            stats.considered += 1;
            let u: f64 = rng.gen();
            if u >= cfg.p {
                continue;
            }
            stats.draws += 1;
            let mut j = rng.gen_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            let sim = cosine_similarity(kernel(i), kernel(j));
            let applied = match sim {
                None => {
                    stats.zero_norm += 1;
                    false
                }
                Some(s) => {
                    if keep_similarities {
                        report.similarities.push(s);
                    }
                    cfg.gate(s)
                }
            };
            if applied {
                stats.gate_passes += 1;
                interpolate_into(
                    &mut live[i * klen..(i + 1) * klen],
                    kernel(i),
                    kernel(j),
                    alpha,
                );
                stats.merges += 1;
            }
            if let Some(t) = trace.as_deref_mut() {
                t.push(MergeEvent {
                    ordinal,
                    i,
                    j,
                    similarity: sim,
                    applied,
                });
            }
        }
        report.layers.push(stats);
    }
    report
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilaritySummary {
    pub count: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub mean_abs: f64,
    /// 20 equal-width bins over `[-1, 1]`; the last bin is closed on the right.
    pub histogram: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityStats {
    pub ordinal: usize,
    /// `(i, j, sim)` for every `i < j`; `sim` is `None` for zero-norm kernels.
    pub pairs: Vec<(usize, usize, Option<f64>)>,
    pub summary: SimilaritySummary,
}

pub const HISTOGRAM_BINS: usize = 20;

/// All pairwise kernel similarities of one conv layer.
pub fn similarity_stats(model: &Model, ordinal: usize) -> Result<SimilarityStats> {
    let weight = model.conv_weight(ordinal)?;
    let n = weight.shape()[0];
    let klen = weight.len() / n;
    let kernel = |idx: usize| &weight.data()[idx * klen..(idx + 1) * klen];
    let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            pairs.push((i, j, cosine_similarity(kernel(i), kernel(j))));
        }
    }
    let values: Vec<f64> = pairs.iter().filter_map(|p| p.2).collect();
    let mut histogram = vec![0u64; HISTOGRAM_BINS];
    for &v in &values {
        let bin = (((v + 1.0) / 2.0) * HISTOGRAM_BINS as f64).floor() as usize;
        histogram[bin.min(HISTOGRAM_BINS - 1)] += 1;
    }
    let count = values.len();
    let summary = SimilaritySummary {
        count,
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean: if count > 0 {
            values.iter().sum::<f64>() / count as f64
        } else {
            f64::NAN
        },
        mean_abs: if count > 0 {
            values.iter().map(|v| v.abs()).sum::<f64>() / count as f64
        } else {
            f64::NAN
        },
        histogram,
    };
    Ok(SimilarityStats {
        ordinal,
        pairs,
        summary,
    })
}
