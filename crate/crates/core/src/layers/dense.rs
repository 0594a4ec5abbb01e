use super::gemm::{sgemm, Strides};
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct DenseGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

fn dims(input: &Tensor, weight: &Tensor) -> Result<(usize, usize, usize)> {
    input.expect_rank(2, "dense input")?;
    weight.expect_rank(2, "dense weight")?;
    let (n, f_in) = (input.shape()[0], input.shape()[1]);
    let (f_out, w_in) = (weight.shape()[0], weight.shape()[1]);
    if w_in != f_in {
        return Err(shape_err(format!(
            "dense: input has {f_in} features, weight expects {w_in}"
        )));
    }
    Ok((n, f_in, f_out))
}

/// `input · weightᵀ + bias` for `input: [N, F_in]`, `weight: [F_out, F_in]`.
pub fn dense_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, f_in, f_out) = dims(input, weight)?;
    if bias.shape() != [f_out] {
        return Err(shape_err(format!(
            "dense: bias shape {:?}, expected [{f_out}]",
            bias.shape()
        )));
    }
    let mut out: Vec<f32> = Vec::with_capacity(n * f_out);
    for _ in 0..n {
        out.extend_from_slice(bias.data());
    }
    sgemm(
        n,
        f_in,
        f_out,
        input.data(),
        Strides(f_in as isize, 1),
        weight.data(),
        Strides(1, f_in as isize),
        1.0,
        &mut out,
        Strides(f_out as isize, 1),
    );
    let out = Tensor::from_parts(vec![n, f_out], out);
    out.ensure_finite("dense_forward")?;
    Ok(out)
}

pub fn dense_backward(grad_out: &Tensor, input: &Tensor, weight: &Tensor) -> Result<DenseGrads> {
    let (n, f_in, f_out) = dims(input, weight)?;
    if grad_out.shape() != [n, f_out] {
        return Err(shape_err(format!(
            "dense_backward: grad_out shape {:?}, expected [{n}, {f_out}]",
            grad_out.shape()
        )));
    }
    let g = grad_out.data();
    let mut gw = vec![0.0f32; f_out * f_in];
    sgemm(
        f_out,
        n,
        f_in,
        g,
        Strides(1, f_out as isize),
        input.data(),
        Strides(f_in as isize, 1),
        0.0,
        &mut gw,
        Strides(f_in as isize, 1),
    );
    let mut gi = vec![0.0f32; n * f_in];
    sgemm(
        n,
        f_out,
        f_in,
        g,
        Strides(f_out as isize, 1),
        weight.data(),
        Strides(f_in as isize, 1),
        0.0,
        &mut gi,
        Strides(f_in as isize, 1),
    );
    let mut gb = vec![0.0f32; f_out];
    for row in g.chunks_exact(f_out) {
        for (b, v) in gb.iter_mut().zip(row) {
            *b += v;
        }
    }
    let grads = DenseGrads {
        input: Tensor::from_parts(vec![n, f_in], gi),
        weight: Tensor::from_parts(vec![f_out, f_in], gw),
        bias: Tensor::from_parts(vec![f_out], gb),
    };
    grads.weight.ensure_finite("dense_backward")?;
    grads.input.ensure_finite("dense_backward")?;
    Ok(grads)
}
