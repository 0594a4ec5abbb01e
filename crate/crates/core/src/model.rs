//! Layer stacks, presets and the named-parameter registry.
//!
//! Convolutional layers carry a 0-based ordinal in forward order. That
//! ordinal is what the merge sweep compares against its shallow-layer cutoff.

use rand::distributions::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::layers::{
    conv2d_backward_impl, conv2d_forward, dense_backward, dense_forward, maxpool2d,
    maxpool2d_backward, relu, relu_backward, LayerSpec, PoolCache,
};
use crate::rng::{stream, Purpose};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Softmax over `K` mutually exclusive classes.
    Multiclass,
    /// `K` independent sigmoid outputs.
    Multilabel,
}

/// Output head: kind plus class count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub kind: HeadKind,
    pub classes: usize,
}

impl Task {
    pub fn multiclass(classes: usize) -> Self {
        Self {
            kind: HeadKind::Multiclass,
            classes,
        }
    }

    pub fn multilabel(classes: usize) -> Self {
        Self {
            kind: HeadKind::Multilabel,
            classes,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    /// `tiny_cnn` or `small_vgg_d`. Exactly one of `preset` / `layers` is set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<LayerSpec>>,
    /// Per-sample input shape `[C, H, W]`.
    pub input: [usize; 3],
    pub classes: usize,
    pub head: HeadKind,
}

impl ArchConfig {
    pub fn preset(name: &str, input: [usize; 3], task: Task) -> Self {
        Self {
            preset: Some(name.to_string()),
            layers: None,
            input,
            classes: task.classes,
            head: task.kind,
        }
    }

    pub fn task(&self) -> Task {
        Task {
            kind: self.head,
            classes: self.classes,
        }
    }

    /// Expands presets into an explicit layer list and checks shapes end to end.
    pub fn resolve(&self) -> Result<Vec<LayerSpec>> {
        if self.classes == 0 {
            return Err(Error::Arch("class count must be >= 1".into()));
        }
        if self.input.iter().any(|&d| d == 0) {
            return Err(Error::Arch(format!("bad input shape {:?}", self.input)));
        }
        let layers = match (&self.preset, &self.layers) {
            (Some(name), None) => preset_layers(name, self.input, self.classes)?,
            (None, Some(layers)) => layers.clone(),
            _ => {
                return Err(Error::Arch(
                    "exactly one of `preset` or `layers` must be given".into(),
                ))
            }
        };
        let mut shape = self.input.to_vec();
        for spec in &layers {
            shape = spec.output_shape(&shape)?;
        }
        if shape != [self.classes] {
            return Err(Error::Arch(format!(
                "network output {shape:?} does not match {} classes",
                self.classes
            )));
        }
        Ok(layers)
    }
}

/// Channel widths of the six `tiny_cnn` conv layers.
pub const TINY_CNN_WIDTHS: [usize; 6] = [8, 8, 16, 16, 32, 32];
/// Channel widths of the four two-conv stages of `small_vgg_d`.
pub const SMALL_VGG_D_STAGES: [usize; 4] = [16, 32, 64, 64];

fn preset_layers(name: &str, input: [usize; 3], classes: usize) -> Result<Vec<LayerSpec>> {
    let [c, h, w] = input;
    let mut layers = Vec::new();
    let (spatial, channels) = match name {
        // Three stages of two 3x3 convs. The last pool is 3/2 so 28 -> 14 -> 7 -> 3.
        "tiny_cnn" => {
            let mut in_c = c;
            let (mut sh, mut sw) = (h, w);
            for (stage, pair) in TINY_CNN_WIDTHS.chunks(2).enumerate() {
                for &out_c in pair {
                    layers.push(LayerSpec::conv3x3(in_c, out_c));
                    layers.push(LayerSpec::Relu);
                    in_c = out_c;
                }
                let window = if stage == 2 { 3 } else { 2 };
                layers.push(LayerSpec::Maxpool2d { window, stride: 2 });
                sh = crate::layers::output_extent(sh, window, 2, 0)?;
                sw = crate::layers::output_extent(sw, window, 2, 0)?;
            }
            ((sh, sw), in_c)
        }
        // VGG-style: four stages of two 3x3 convs, each followed by 2x2 pooling.
        "small_vgg_d" => {
            let mut in_c = c;
            let (mut sh, mut sw) = (h, w);
            for &out_c in &SMALL_VGG_D_STAGES {
                for _ in 0..2 {
                    layers.push(LayerSpec::conv3x3(in_c, out_c));
                    layers.push(LayerSpec::Relu);
                    in_c = out_c;
                }
                layers.push(LayerSpec::Maxpool2d {
                    window: 2,
                    stride: 2,
                });
                sh = crate::layers::output_extent(sh, 2, 2, 0)?;
                sw = crate::layers::output_extent(sw, 2, 2, 0)?;
            }
            ((sh, sw), in_c)
        }
        other => return Err(Error::Arch(format!("unknown preset `{other}`"))),
    };
    layers.push(LayerSpec::Flatten);
    layers.push(LayerSpec::Dense {
        in_features: channels * spatial.0 * spatial.1,
        out_features: classes,
    });
    Ok(layers)
}

#[derive(Clone, Debug)]
struct Layer {
    spec: LayerSpec,
    /// Parameter name prefix, e.g. `conv3` or `fc0`.
    prefix: Option<String>,
    weight: Option<Tensor>,
    bias: Option<Tensor>,
}

#[derive(Clone, Debug)]
pub struct Model {
    arch: ArchConfig,
    layers: Vec<Layer>,
    /// Layer position of each conv ordinal.
    conv_positions: Vec<usize>,
}

/// Builds a model with He-uniform (fan-in) weights and zero biases.
pub fn build_model(config: &ArchConfig, seed: u64) -> Result<Model> {
    let mut model = Model::zeroed(config)?;
    let mut rng = stream(seed, Purpose::Init, 0);
    for layer in &mut model.layers {
        if let Some(w) = layer.weight.as_mut() {
            let fan_in: usize = w.shape()[1..].iter().product();
            let bound = (6.0 / fan_in as f64).sqrt() as f32;
            let dist = Uniform::new_inclusive(-bound, bound);
            for v in w.data_mut() {
                *v = dist.sample(&mut rng);
            }
        }
    }
    Ok(model)
}

/// Activations retained by [`Model::forward_train`] for the backward pass.
pub struct ForwardCache {
    entries: Vec<CacheEntry>,
}

enum CacheEntry {
    Input(Tensor),
    Pool(PoolCache),
    Shape(Vec<usize>),
}

impl Model {
    /// All-zero parameters with the architecture's shapes.
    pub fn zeroed(config: &ArchConfig) -> Result<Self> {
        let specs = config.resolve()?;
        let mut layers = Vec::with_capacity(specs.len());
        let mut conv_positions = Vec::new();
        let mut n_dense = 0;
        for (pos, spec) in specs.into_iter().enumerate() {
            let (prefix, weight, bias) = match spec.param_shapes() {
                Some((ws, bs)) => {
                    let prefix = if spec.is_conv() {
                        conv_positions.push(pos);
                        format!("conv{}", conv_positions.len() - 1)
                    } else {
                        n_dense += 1;
                        format!("fc{}", n_dense - 1)
                    };
                    (
                        Some(prefix),
                        Some(Tensor::zeros(&ws)),
                        Some(Tensor::zeros(&bs)),
                    )
                }
                None => (None, None, None),
            };
            layers.push(Layer {
                spec,
                prefix,
                weight,
                bias,
            });
        }
        Ok(Self {
            arch: config.clone(),
            layers,
            conv_positions,
        })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn task(&self) -> Task {
        self.arch.task()
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.arch.input
    }

    pub fn layer_specs(&self) -> impl Iterator<Item = &LayerSpec> {
        self.layers.iter().map(|l| &l.spec)
    }

    pub fn n_conv(&self) -> usize {
        self.conv_positions.len()
    }

    /// Conv ordinal of the layer at `position`, if it is a conv layer.
    pub fn conv_ordinal(&self, position: usize) -> Option<usize> {
        self.conv_positions.iter().position(|&p| p == position)
    }

    /// `(ordinal, weight)` for every conv layer, in forward order.
    pub fn conv_layers(&self) -> Vec<(usize, &Tensor)> {
        self.conv_positions
            .iter()
            .enumerate()
            .map(|(ord, &pos)| (ord, self.layers[pos].weight.as_ref().expect("conv weight")))
            .collect()
    }

    pub fn conv_weight(&self, ordinal: usize) -> Result<&Tensor> {
        let pos = self.conv_position(ordinal)?;
        Ok(self.layers[pos].weight.as_ref().expect("conv weight"))
    }

    pub fn conv_weight_mut(&mut self, ordinal: usize) -> Result<&mut Tensor> {
        let pos = self.conv_position(ordinal)?;
        Ok(self.layers[pos].weight.as_mut().expect("conv weight"))
    }

    fn conv_position(&self, ordinal: usize) -> Result<usize> {
        self.conv_positions
            .get(ordinal)
            .copied()
            .ok_or(Error::UnknownLayer {
                ordinal,
                n_conv: self.n_conv(),
            })
    }

    /// Parameter names in registry order (`weight` before `bias`, layers in forward order).
    pub fn param_names(&self) -> Vec<String> {
        self.params().into_iter().map(|(n, _)| n).collect()
    }

    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for layer in &self.layers {
            if let (Some(prefix), Some(w), Some(b)) = (&layer.prefix, &layer.weight, &layer.bias) {
                out.push((format!("{prefix}.weight"), w));
                out.push((format!("{prefix}.bias"), b));
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            if let (Some(w), Some(b)) = (layer.weight.as_mut(), layer.bias.as_mut()) {
                out.push(w);
                out.push(b);
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    fn slot_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let (prefix, field) = name.rsplit_once('.')?;
        let layer = self
            .layers
            .iter_mut()
            .find(|l| l.prefix.as_deref() == Some(prefix))?;
        match field {
            "weight" => layer.weight.as_mut(),
            "bias" => layer.bias.as_mut(),
            _ => None,
        }
    }

    pub fn get_param(&self, name: &str) -> Result<&Tensor> {
        self.params()
            .into_iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    /// Replaces a parameter tensor; the shape must match the registry.
    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .slot_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        if slot.shape() != value.shape() {
            return Err(shape_err(format!(
                "parameter `{name}` has shape {:?}, got {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        value.ensure_finite("set_param")?;
        *slot = value;
        Ok(())
    }

    /// Bitwise equality of every parameter.
    pub fn bits_eq(&self, other: &Model) -> bool {
        let (a, b) = (self.params(), other.params());
        a.len() == b.len()
            && a
                .iter()
                .zip(&b)
                .all(|((na, ta), (nb, tb))| na == nb && ta.bits_eq(tb))
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        x.expect_rank(4, "model input")?;
        if x.shape()[1..] != self.arch.input {
            return Err(shape_err(format!(
                "model expects [N, {:?}], got {:?}",
                self.arch.input,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Inference forward pass: `[N, C, H, W]` to logits `[N, K]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut act = x.clone();
        for layer in &self.layers {
            act = layer_forward(layer, &act)?.0;
        }
        Ok(act)
    }

    /// Forward pass that keeps what [`Model::backward`] needs.
    pub fn forward_train(&self, x: &Tensor) -> Result<(Tensor, ForwardCache)> {
        self.check_input(x)?;
        let mut entries = Vec::with_capacity(self.layers.len());
        let mut act = x.clone();
        for layer in &self.layers {
            let (out, pool) = layer_forward(layer, &act)?;
            let entry = match layer.spec {
                LayerSpec::Maxpool2d { .. } => CacheEntry::Pool(pool.expect("pool cache")),
                LayerSpec::Flatten => CacheEntry::Shape(act.shape().to_vec()),
                _ => CacheEntry::Input(act),
            };
            entries.push(entry);
            act = out;
        }
        Ok((act, ForwardCache { entries }))
    }

    /// Parameter gradients in [`Model::params`] order.
    pub fn backward(&self, cache: &ForwardCache, grad_logits: &Tensor) -> Result<Vec<Tensor>> {
        if cache.entries.len() != self.layers.len() {
            return Err(shape_err("forward cache does not belong to this model"));
        }
        let mut grads: Vec<Tensor> = Vec::new();
        let mut grad = grad_logits.clone();
        // Layers before the first parameterized one never need an input gradient.
        let first_param = self
            .layers
            .iter()
            .position(|l| l.weight.is_some())
            .unwrap_or(0);
        for (pos, (layer, entry)) in self.layers.iter().zip(&cache.entries).enumerate().rev() {
            let want_input = pos > first_param;
            grad = match (&layer.spec, entry) {
                (LayerSpec::Conv2d { stride, padding, .. }, CacheEntry::Input(input)) => {
                    let w = layer.weight.as_ref().expect("conv weight");
                    let (gi, gw, gb) =
                        conv2d_backward_impl(&grad, input, w, *stride, *padding, want_input)?;
                    grads.push(gb);
                    grads.push(gw);
                    match gi {
                        Some(gi) => gi,
                        None => break,
                    }
                }
                (LayerSpec::Dense { .. }, CacheEntry::Input(input)) => {
                    let w = layer.weight.as_ref().expect("dense weight");
                    let g = dense_backward(&grad, input, w)?;
                    grads.push(g.bias);
                    grads.push(g.weight);
                    if !want_input {
                        break;
                    }
                    g.input
                }
                (LayerSpec::Relu, CacheEntry::Input(input)) => relu_backward(&grad, input)?,
                (LayerSpec::Maxpool2d { .. }, CacheEntry::Pool(pc)) => {
                    maxpool2d_backward(&grad, pc)?
                }
                (LayerSpec::Flatten, CacheEntry::Shape(shape)) => grad.reshape(shape)?,
                _ => return Err(shape_err("forward cache does not match layer kinds")),
            };
        }
        grads.reverse();
        Ok(grads)
    }
}

fn layer_forward(layer: &Layer, x: &Tensor) -> Result<(Tensor, Option<PoolCache>)> {
    match layer.spec {
        LayerSpec::Conv2d {
            stride, padding, ..
        } => {
            let w = layer.weight.as_ref().expect("conv weight");
            let b = layer.bias.as_ref().expect("conv bias");
            Ok((conv2d_forward(x, w, b, stride, padding)?, None))
        }
        LayerSpec::Relu => Ok((relu(x), None)),
        LayerSpec::Maxpool2d { window, stride } => {
            let (y, cache) = maxpool2d(x, window, stride)?;
            Ok((y, Some(cache)))
        }
        LayerSpec::Dense { .. } => {
            let w = layer.weight.as_ref().expect("dense weight");
            let b = layer.bias.as_ref().expect("dense bias");
            Ok((dense_forward(x, w, b)?, None))
        }
        LayerSpec::Flatten => {
            let n = x.shape()[0];
            let f = x.len() / n;
            Ok((x.clone().reshape(&[n, f])?, None))
        }
    }
}
