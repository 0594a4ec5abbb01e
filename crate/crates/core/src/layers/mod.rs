//! Layer specifications and the explicit forward/backward math for each kind.
//!
//! Every op is a pure function of its inputs. Convolution uses the
//! cross-correlation convention (no kernel flip).

mod activation;
mod conv;
mod dense;
mod gemm;
mod loss;
mod pool;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

pub use activation::{relu, relu_backward};
pub use conv::{conv2d_backward, conv2d_forward, Conv2dGrads};
pub use dense::{dense_backward, dense_forward, DenseGrads};
pub use loss::{sigmoid_bce_loss, softmax_ce_loss};
pub use pool::{maxpool2d, maxpool2d_backward, PoolCache};

pub(crate) use conv::conv2d_backward_impl;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv2d {
        out_channels: usize,
        in_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    Relu,
    Maxpool2d {
        window: usize,
        stride: usize,
    },
    Dense {
        in_features: usize,
        out_features: usize,
    },
    Flatten,
}

fn one() -> usize {
    1
}

impl LayerSpec {
    /// Square conv with stride 1 and "same" padding for odd kernels.
    pub fn conv3x3(in_channels: usize, out_channels: usize) -> Self {
        LayerSpec::Conv2d {
            out_channels,
            in_channels,
            kernel_h: 3,
            kernel_w: 3,
            stride: 1,
            padding: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LayerSpec::Conv2d {
                out_channels,
                in_channels,
                kernel_h,
                kernel_w,
                stride,
                ..
            } => {
                if out_channels == 0 || in_channels == 0 {
                    return Err(Error::Arch("conv channel counts must be >= 1".into()));
                }
                if kernel_h == 0 || kernel_w == 0 {
                    return Err(Error::Arch("conv kernel extents must be >= 1".into()));
                }
                if stride == 0 {
                    return Err(Error::Arch("conv stride must be >= 1".into()));
                }
            }
            LayerSpec::Maxpool2d { window, stride } => {
                if window == 0 || stride == 0 {
                    return Err(Error::Arch("pool window and stride must be >= 1".into()));
                }
            }
            LayerSpec::Dense {
                in_features,
                out_features,
            } => {
                if in_features == 0 || out_features == 0 {
                    return Err(Error::Arch("dense features must be >= 1".into()));
                }
            }
            LayerSpec::Relu | LayerSpec::Flatten => {}
        }
        Ok(())
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.validate()?;
        match *self {
            LayerSpec::Conv2d {
                out_channels,
                in_channels,
                kernel_h,
                kernel_w,
                stride,
                padding,
            } => {
                let [c, h, w] = spatial(input)?;
                if c != in_channels {
                    return Err(Error::Arch(format!(
                        "conv expects {in_channels} input channels, got {c}"
                    )));
                }
                Ok(vec![
                    out_channels,
                    output_extent(h, kernel_h, stride, padding)?,
                    output_extent(w, kernel_w, stride, padding)?,
                ])
            }
            LayerSpec::Maxpool2d { window, stride } => {
                let [c, h, w] = spatial(input)?;
                Ok(vec![
                    c,
                    output_extent(h, window, stride, 0)?,
                    output_extent(w, window, stride, 0)?,
                ])
            }
            LayerSpec::Dense {
                in_features,
                out_features,
            } => {
                if input != [in_features] {
                    return Err(Error::Arch(format!(
                        "dense expects input [{in_features}], got {input:?}"
                    )));
                }
                Ok(vec![out_features])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    /// Shapes of (weight, bias) for parameterized layers.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Conv2d {
                out_channels,
                in_channels,
                kernel_h,
                kernel_w,
                ..
            } => Some((
                vec![out_channels, in_channels, kernel_h, kernel_w],
                vec![out_channels],
            )),
            LayerSpec::Dense {
                in_features,
                out_features,
            } => Some((vec![out_features, in_features], vec![out_features])),
            _ => None,
        }
    }

    pub fn is_conv(&self) -> bool {
        matches!(self, LayerSpec::Conv2d { .. })
    }
}

fn spatial(input: &[usize]) -> Result<[usize; 3]> {
    match *input {
        [c, h, w] => Ok([c, h, w]),
        _ => Err(Error::Arch(format!(
            "expected a [C, H, W] feature map, got {input:?}"
        ))),
    }
}

/// `(size + 2 * padding - kernel) / stride + 1`, required to be a positive integer.
pub fn output_extent(size: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    let padded = size + 2 * padding;
    if stride == 0 || kernel == 0 || padded < kernel || (padded - kernel) % stride != 0 {
        return Err(shape_err(format!(
            "non-integer output extent: size {size}, kernel {kernel}, stride {stride}, padding {padding}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}
