//! SGD training, the two-phase pretrain/merge protocol, and evaluation.

use serde::{Deserialize, Serialize};

use crate::data::{augment_flip_with, batch_iter, flip_decision, BatchLabels, Dataset, Split};
use crate::error::{shape_err, Error, Result};
use crate::layers::{sigmoid_bce_loss, softmax_ce_loss};
use crate::merge::{inmerge_sweep, LayerMergeStats, MergeConfig, MergeReport};
use crate::metrics::{accuracy, auroc, mean_auroc, MetricBundle};
use crate::model::{build_model, ArchConfig, HeadKind, Model};
use crate::rng::{stream, Purpose};
use crate::tensor::Tensor;

/// Fixed evaluation chunk size, so metrics never depend on the caller's batching.
pub const EVAL_BATCH: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "d_lr0")]
    pub lr0: f64,
    #[serde(default = "d_momentum")]
    pub momentum: f64,
    #[serde(default = "d_weight_decay")]
    pub weight_decay: f64,
    /// Epochs at which the rate is multiplied by `gamma`.
    /// Defaults to `[floor(0.75 * total_epochs)]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub milestones: Option<Vec<usize>>,
    #[serde(default = "d_gamma")]
    pub gamma: f64,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_pretrain")]
    pub epochs_pretrain: usize,
    #[serde(default = "d_inmerge")]
    pub epochs_inmerge: usize,
    #[serde(default)]
    pub seed: u64,
    /// Probability of a horizontal flip per training sample.
    #[serde(default = "d_flip")]
    pub flip_prob: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merge: Option<MergeConfig>,
}

fn d_lr0() -> f64 {
    0.01
}
fn d_momentum() -> f64 {
    0.9
}
fn d_weight_decay() -> f64 {
    1e-4
}
fn d_gamma() -> f64 {
    0.1
}
fn d_batch() -> usize {
    64
}
fn d_pretrain() -> usize {
    20
}
fn d_inmerge() -> usize {
    5
}
fn d_flip() -> f64 {
    0.5
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: d_lr0(),
            momentum: d_momentum(),
            weight_decay: d_weight_decay(),
            milestones: None,
            gamma: d_gamma(),
            batch_size: d_batch(),
            epochs_pretrain: d_pretrain(),
            epochs_inmerge: d_inmerge(),
            seed: 0,
            flip_prob: d_flip(),
            merge: None,
        }
    }
}

impl TrainConfig {
    pub fn total_epochs(&self) -> usize {
        self.epochs_pretrain + self.epochs_inmerge
    }

    pub fn milestones(&self) -> Vec<usize> {
        match &self.milestones {
            Some(m) => m.clone(),
            None => match self.total_epochs() * 3 / 4 {
                0 => Vec::new(),
                m => vec![m],
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.lr0 > 0.0) {
            return bad(format!("lr0 must be > 0, got {}", self.lr0));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be >= 0".into());
        }
        if !(self.gamma > 0.0) {
            return bad("gamma must be > 0".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return bad("flip_prob must be in [0, 1]".into());
        }
        if let Some(m) = &self.milestones {
            if m.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("milestones must be strictly increasing: {m:?}"));
            }
        }
        if let Some(merge) = &self.merge {
            merge.validate()?;
        }
        Ok(())
    }

    /// `"inmerge"` when merge epochs will actually run sweeps, else `"baseline"`.
    pub fn tag(&self) -> &'static str {
        if self.merge.is_some() && self.epochs_inmerge > 0 {
            "inmerge"
        } else {
            "baseline"
        }
    }
}

/// `lr0 * gamma^(number of milestones <= epoch)`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let passed = cfg.milestones().iter().filter(|&&m| m <= epoch).count();
    cfg.lr0 * cfg.gamma.powi(passed as i32)
}

/// Classic momentum with weight decay coupled into the gradient:
/// `g' = g + wd * w; v = momentum * v + g'; w -= lr * v`.
pub fn sgd_step(
    param: &mut Tensor,
    grad: &Tensor,
    velocity: &mut Tensor,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != velocity.shape() {
        return Err(shape_err(format!(
            "sgd_step: param {:?}, grad {:?}, velocity {:?}",
            param.shape(),
            grad.shape(),
            velocity.shape()
        )));
    }
    let (lr, mu, wd) = (lr as f32, momentum as f32, weight_decay as f32);
    for ((w, &g), v) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(velocity.data_mut())
    {
        let g = g + wd * *w;
        *v = mu * *v + g;
        *w -= lr * *v;
    }
    param.ensure_finite("sgd_step")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Inmerge,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub iterations: usize,
    pub sweeps: usize,
    pub train_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merge: Option<LayerMergeStats>,
}

/// One training epoch. In the merge phase a sweep runs at the start of every
/// iteration, before the forward pass.
///
/// `on_sweep` receives `(batch index, report)` after each sweep.
pub fn train_epoch(
    model: &mut Model,
    velocity: &mut [Tensor],
    data: &Dataset,
    cfg: &TrainConfig,
    phase: Phase,
    epoch: usize,
    on_sweep: &mut dyn FnMut(usize, &MergeReport),
) -> Result<EpochStats> {
    check_compat(model, data)?;
    let split = &data.train;
    if split.is_empty() {
        return Err(Error::Empty("training split"));
    }
    let merge = match phase {
        Phase::Inmerge => cfg.merge.as_ref(),
        Phase::Pretrain => None,
    };
    let mut merge_rng = merge.map(|m| stream(m.seed, Purpose::Merge, epoch as u64));
    let lr = lr_at(epoch, cfg);
    let mut totals = MergeReport::default();
    let mut loss_sum = 0.0f64;
    let batches = batch_iter(split.n, cfg.batch_size, cfg.seed, epoch);
    for (b, idx) in batches.iter().enumerate() {
        if let (Some(mcfg), Some(rng)) = (merge, merge_rng.as_mut()) {
            let report = inmerge_sweep(model, mcfg, rng);
            on_sweep(b, &report);
            totals.accumulate(&report);
        }
        let numeric = |e: Error| match e {
            Error::NonFinite(_) => Error::NonFiniteLoss { epoch, batch: b },
            other => other,
        };
        let mut x = data.gather_images(split, idx)?;
        if cfg.flip_prob > 0.0 {
            augment_flip_with(&mut x, |s| {
                flip_decision(cfg.seed, epoch, idx[s], cfg.flip_prob)
            })?;
        }
        let (logits, cache) = model.forward_train(&x).map_err(numeric)?;
        let (loss, grad) = match data.gather_labels(split, idx) {
            BatchLabels::Classes(y) => softmax_ce_loss(&logits, &y),
            BatchLabels::Binary(y) => sigmoid_bce_loss(&logits, &y),
        }
        .map_err(numeric)?;
        let grads = model.backward(&cache, &grad).map_err(numeric)?;
        for ((param, g), v) in model.params_mut().into_iter().zip(&grads).zip(velocity.iter_mut()) {
            sgd_step(param, g, v, lr, cfg.momentum, cfg.weight_decay).map_err(numeric)?;
        }
        loss_sum += loss * idx.len() as f64;
    }
    Ok(EpochStats {
        iterations: batches.len(),
        sweeps: if merge.is_some() { batches.len() } else { 0 },
        train_loss: loss_sum / split.n as f64,
        merge: merge.map(|_| totals.totals()),
    })
}

fn check_compat(model: &Model, data: &Dataset) -> Result<()> {
    if model.task() != data.task {
        return Err(Error::InvalidArgument(format!(
            "model head {:?} with {} classes does not match dataset {:?} with {} classes",
            model.task().kind,
            model.task().classes,
            data.task.kind,
            data.task.classes
        )));
    }
    if model.input_shape() != data.input_shape() {
        return Err(Error::InvalidArgument(format!(
            "model input {:?} does not match dataset images {:?}",
            model.input_shape(),
            data.input_shape()
        )));
    }
    Ok(())
}

/// Per-sample scores: softmax probabilities (multiclass) or sigmoids (multilabel).
#[derive(Clone, Debug)]
pub struct Predictions {
    pub classes: usize,
    /// `n * classes` row-major.
    pub scores: Vec<f64>,
    pub loss: f64,
}

pub fn predict(model: &Model, data: &Dataset, split: &Split) -> Result<Predictions> {
    check_compat(model, data)?;
    if split.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    let k = data.task.classes;
    let mut scores = Vec::with_capacity(split.n * k);
    let mut loss_sum = 0.0f64;
    let all: Vec<usize> = (0..split.n).collect();
    for idx in all.chunks(EVAL_BATCH) {
        let x = data.gather_images(split, idx)?;
        let logits = model.forward(&x)?;
        let (loss, _) = match data.gather_labels(split, idx) {
            BatchLabels::Classes(y) => softmax_ce_loss(&logits, &y)?,
            BatchLabels::Binary(y) => sigmoid_bce_loss(&logits, &y)?,
        };
        loss_sum += loss * idx.len() as f64;
        for row in logits.data().chunks_exact(k) {
            match data.task.kind {
                HeadKind::Multiclass => {
                    let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
                    let z: f64 = row.iter().map(|&v| (v as f64 - max).exp()).sum();
                    scores.extend(row.iter().map(|&v| (v as f64 - max).exp() / z));
                }
                HeadKind::Multilabel => {
                    scores.extend(row.iter().map(|&v| 1.0 / (1.0 + (-(v as f64)).exp())));
                }
            }
        }
    }
    Ok(Predictions {
        classes: k,
        scores,
        loss: loss_sum / split.n as f64,
    })
}

/// Binary ground truth for class `c` of every sample in `split`.
pub fn class_truth(data: &Dataset, split: &Split, class: usize) -> Vec<bool> {
    match data.task.kind {
        HeadKind::Multiclass => split.labels.iter().map(|&l| l as usize == class).collect(),
        HeadKind::Multilabel => split
            .labels
            .chunks_exact(data.task.classes)
            .map(|row| row[class] == 1)
            .collect(),
    }
}

/// Inference-only metrics. Never mutates the model and never merges.
pub fn evaluate(model: &Model, data: &Dataset, split: &Split) -> Result<MetricBundle> {
    let pred = predict(model, data, split)?;
    let k = pred.classes;
    let per_class: Vec<Option<f64>> = (0..k)
        .map(|c| {
            let scores: Vec<f64> = pred.scores.iter().skip(c).step_by(k).copied().collect();
            auroc(&scores, &class_truth(data, split, c)).ok()
        })
        .collect();
    let accuracy = match data.task.kind {
        HeadKind::Multiclass => {
            let predicted: Vec<usize> = pred
                .scores
                .chunks_exact(k)
                .map(|row| {
                    row.iter()
                        .enumerate()
                        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
                            if v > best.1 {
                                (i, v)
                            } else {
                                best
                            }
                        })
                        .0
                })
                .collect();
            let truth: Vec<usize> = split.labels.iter().map(|&l| l as usize).collect();
            Some(accuracy(&predicted, &truth)?)
        }
        HeadKind::Multilabel => None,
    };
    Ok(MetricBundle {
        n_samples: split.n,
        loss: pred.loss,
        accuracy,
        mean_auroc: mean_auroc(&per_class).ok(),
        per_class_auroc: Some(per_class),
    })
}

/// Model-selection metric: accuracy for multiclass heads, mean AUROC for multilabel.
pub fn selection_metric(bundle: &MetricBundle) -> f64 {
    bundle
        .accuracy
        .or(bundle.mean_auroc)
        .unwrap_or(f64::NEG_INFINITY)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub lr: f64,
    pub iterations: usize,
    pub sweeps: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_metric: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merge: Option<LayerMergeStats>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub tag: String,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_metric: Option<f64>,
}

impl TrainLog {
    /// One JSON object per line: every epoch record, then a final summary line.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for rec in &self.epochs {
            let mut v = serde_json::to_value(rec)?;
            v["record"] = "epoch".into();
            v["tag"] = self.tag.clone().into();
            out.push_str(&serde_json::to_string(&v)?);
            out.push('\n');
        }
        let summary = serde_json::json!({
            "record": "final",
            "tag": self.tag,
            "best_epoch": self.best_epoch,
            "best_val_metric": self.best_val_metric,
        });
        out.push_str(&serde_json::to_string(&summary)?);
        out.push('\n');
        Ok(out)
    }
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: Model,
    pub velocity: Vec<Tensor>,
    pub next_epoch: usize,
    pub best_model: Option<Model>,
    pub log: TrainLog,
}

impl TrainState {
    pub fn fresh(arch: &ArchConfig, cfg: &TrainConfig) -> Result<Self> {
        let model = build_model(arch, cfg.seed)?;
        let velocity = model
            .params()
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect();
        Ok(Self {
            model,
            velocity,
            next_epoch: 0,
            best_model: None,
            log: TrainLog {
                tag: cfg.tag().to_string(),
                ..Default::default()
            },
        })
    }
}

/// Drives the two-phase protocol one epoch at a time.
pub struct Trainer<'a> {
    data: &'a Dataset,
    cfg: TrainConfig,
    state: TrainState,
    on_sweep: Option<Box<dyn FnMut(usize, usize, &MergeReport) + 'a>>,
}

impl<'a> Trainer<'a> {
    pub fn new(arch: &ArchConfig, data: &'a Dataset, cfg: TrainConfig) -> Result<Self> {
        let state = TrainState::fresh(arch, &cfg)?;
        Self::resume(data, cfg, state)
    }

    /// Continues from a saved state. `cfg` may differ from the original run
    /// (e.g. a different merge setting for the finetuning phase).
    pub fn resume(data: &'a Dataset, cfg: TrainConfig, mut state: TrainState) -> Result<Self> {
        cfg.validate()?;
        check_compat(&state.model, data)?;
        if data.train.is_empty() {
            return Err(Error::Empty("training split"));
        }
        if data.val.is_empty() {
            return Err(Error::Empty("validation split"));
        }
        if state.velocity.len() != state.model.params().len() {
            return Err(shape_err("optimizer state does not match model parameters"));
        }
        state.log.tag = cfg.tag().to_string();
        Ok(Self {
            data,
            cfg,
            state,
            on_sweep: None,
        })
    }

    /// Observer called with `(epoch, batch, report)` after every sweep.
    pub fn on_sweep(&mut self, f: impl FnMut(usize, usize, &MergeReport) + 'a) {
        self.on_sweep = Some(Box::new(f));
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    pub fn is_done(&self) -> bool {
        self.state.next_epoch >= self.cfg.total_epochs()
    }

    pub fn phase_of(&self, epoch: usize) -> Phase {
        if epoch < self.cfg.epochs_pretrain {
            Phase::Pretrain
        } else {
            Phase::Inmerge
        }
    }

    pub fn run_epoch(&mut self) -> Result<&EpochRecord> {
        let epoch = self.state.next_epoch;
        let phase = self.phase_of(epoch);
        let on_sweep = &mut self.on_sweep;
        let mut sink = |b: usize, r: &MergeReport| {
            if let Some(f) = on_sweep.as_mut() {
                f(epoch, b, r);
            }
        };
        let stats = train_epoch(
            &mut self.state.model,
            &mut self.state.velocity,
            self.data,
            &self.cfg,
            phase,
            epoch,
            &mut sink,
        )?;
        let val = evaluate(&self.state.model, self.data, &self.data.val)?;
        let metric = selection_metric(&val);
        let log = &mut self.state.log;
        if log.best_val_metric.map_or(true, |b| metric > b) {
            log.best_val_metric = Some(metric);
            log.best_epoch = Some(epoch);
            self.state.best_model = Some(self.state.model.clone());
        }
        log.epochs.push(EpochRecord {
            epoch,
            phase,
            lr: lr_at(epoch, &self.cfg),
            iterations: stats.iterations,
            sweeps: stats.sweeps,
            train_loss: stats.train_loss,
            val_loss: val.loss,
            val_metric: metric,
            merge: stats.merge,
        });
        self.state.next_epoch += 1;
        Ok(log.epochs.last().expect("just pushed"))
    }

    /// Runs epochs until `epoch` epochs are complete (capped at the protocol length).
    pub fn run_until(&mut self, epoch: usize) -> Result<()> {
        while self.state.next_epoch < epoch.min(self.cfg.total_epochs()) {
            self.run_epoch()?;
        }
        Ok(())
    }

    /// Best-validation model and the log.
    pub fn finish(self) -> (Model, TrainLog) {
        let TrainState {
            model,
            best_model,
            log,
            ..
        } = self.state;
        (best_model.unwrap_or(model), log)
    }
}

/// `epochs_pretrain` plain epochs, then `epochs_inmerge` epochs with a sweep per
/// iteration. Returns the best-validation model.
pub fn run_protocol(arch: &ArchConfig, data: &Dataset, cfg: &TrainConfig) -> Result<(Model, TrainLog)> {
    let mut trainer = Trainer::new(arch, data, cfg.clone())?;
    trainer.run_until(cfg.total_epochs())?;
    Ok(trainer.finish())
}
