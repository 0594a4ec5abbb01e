use super::output_extent;
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// Argmax positions recorded by [`maxpool2d`], one flat input index per output.
#[derive(Clone, Debug)]
pub struct PoolCache {
    pub input_shape: Vec<usize>,
    pub argmax: Vec<usize>,
}

/// Max pooling over `[N, C, H, W]`. Ties go to the first element in row-major
/// window order.
pub fn maxpool2d(input: &Tensor, window: usize, stride: usize) -> Result<(Tensor, PoolCache)> {
    input.expect_rank(4, "maxpool2d input")?;
    let [n, c, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]];
    let ho = output_extent(h, window, stride, 0)?;
    let wo = output_extent(w, window, stride, 0)?;
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut argmax = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for y in 0..ho {
            for xo in 0..wo {
                let mut best_idx = base + (y * stride) * w + xo * stride;
                let mut best = x[best_idx];
                for i in 0..window {
                    let row = base + (y * stride + i) * w + xo * stride;
                    for j in 0..window {
                        let v = x[row + j];
                        if v > best {
                            best = v;
                            best_idx = row + j;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    Ok((
        Tensor::from_parts(vec![n, c, ho, wo], out),
        PoolCache {
            input_shape: input.shape().to_vec(),
            argmax,
        },
    ))
}

/// Routes each output gradient to its recorded argmax position.
pub fn maxpool2d_backward(grad_out: &Tensor, cache: &PoolCache) -> Result<Tensor> {
    if grad_out.len() != cache.argmax.len() {
        return Err(shape_err(format!(
            "maxpool2d_backward: {} gradients for {} pooled outputs",
            grad_out.len(),
            cache.argmax.len()
        )));
    }
    let mut grad = Tensor::zeros(&cache.input_shape);
    let gi = grad.data_mut();
    for (&idx, &g) in cache.argmax.iter().zip(grad_out.data()) {
        gi[idx] += g;
    }
    Ok(grad)
}
