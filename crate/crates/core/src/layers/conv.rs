use super::gemm::{sgemm, Strides};
use super::output_extent;
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Conv2dGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Copy)]
struct Geometry {
    n: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn new(input: &Tensor, weight: &Tensor, stride: usize, padding: usize) -> Result<Self> {
        input.expect_rank(4, "conv2d input")?;
        weight.expect_rank(4, "conv2d weight")?;
        let [n, c_in, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]];
        let [c_out, wc, kh, kw] = [
            weight.shape()[0],
            weight.shape()[1],
            weight.shape()[2],
            weight.shape()[3],
        ];
        if wc != c_in {
            return Err(shape_err(format!(
                "conv2d: input has {c_in} channels, weight expects {wc}"
            )));
        }
        let ho = output_extent(h, kh, stride, padding)?;
        let wo = output_extent(w, kw, stride, padding)?;
        Ok(Self {
            n,
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            padding,
            ho,
            wo,
        })
    }

    fn patch_len(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }

    fn in_sample(&self) -> usize {
        self.c_in * self.h * self.w
    }

    /// Unfold one sample `[C, H, W]` into `[C*kh*kw, Ho*Wo]`.
    fn im2col(&self, x: &[f32], col: &mut [f32]) {
        let p = self.out_plane();
        for c in 0..self.c_in {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (c * self.kh + i) * self.kw + j;
                    let dst = &mut col[row * p..(row + 1) * p];
                    for y in 0..self.ho {
                        let iy = (y * self.stride + i) as isize - self.padding as isize;
                        let out_row = &mut dst[y * self.wo..(y + 1) * self.wo];
                        if iy < 0 || iy >= self.h as isize {
                            out_row.fill(0.0);
                            continue;
                        }
                        let src = &x[(c * self.h + iy as usize) * self.w..][..self.w];
                        for (xo, v) in out_row.iter_mut().enumerate() {
                            let ix = (xo * self.stride + j) as isize - self.padding as isize;
                            *v = if ix < 0 || ix >= self.w as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Scatter-add `[C*kh*kw, Ho*Wo]` back into one sample `[C, H, W]`.
    fn col2im(&self, col: &[f32], x: &mut [f32]) {
        let p = self.out_plane();
        for c in 0..self.c_in {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (c * self.kh + i) * self.kw + j;
                    let src = &col[row * p..(row + 1) * p];
                    for y in 0..self.ho {
                        let iy = (y * self.stride + i) as isize - self.padding as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut x[(c * self.h + iy as usize) * self.w..][..self.w];
                        for xo in 0..self.wo {
                            let ix = (xo * self.stride + j) as isize - self.padding as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] += src[y * self.wo + xo];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Batched 2-D cross-correlation.
///
/// `input: [N, C_in, H, W]`, `weight: [C_out, C_in, kh, kw]`, `bias: [C_out]`.
pub fn conv2d_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let g = Geometry::new(input, weight, stride, padding)?;
    if bias.shape() != [g.c_out] {
        return Err(shape_err(format!(
            "conv2d: bias shape {:?}, expected [{}]",
            bias.shape(),
            g.c_out
        )));
    }
    let k = g.patch_len();
    let p = g.out_plane();
    let mut col = vec![0.0f32; k * p];
    let mut out = vec![0.0f32; g.n * g.c_out * p];
    let x = input.data();
    for (s, out_s) in out.chunks_exact_mut(g.c_out * p).enumerate() {
        g.im2col(&x[s * g.in_sample()..(s + 1) * g.in_sample()], &mut col);
        for (o, plane) in out_s.chunks_exact_mut(p).enumerate() {
            plane.fill(bias.data()[o]);
        }
        sgemm(
            g.c_out,
            k,
            p,
            weight.data(),
            Strides(k as isize, 1),
            &col,
            Strides(p as isize, 1),
            1.0,
            out_s,
            Strides(p as isize, 1),
        );
    }
    let out = Tensor::from_parts(vec![g.n, g.c_out, g.ho, g.wo], out);
    out.ensure_finite("conv2d_forward")?;
    Ok(out)
}

/// Exact gradients of [`conv2d_forward`] given the upstream gradient.
pub fn conv2d_backward(
    grad_out: &Tensor,
    input: &Tensor,
    weight: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Conv2dGrads> {
    let (gi, gw, gb) = conv2d_backward_impl(grad_out, input, weight, stride, padding, true)?;
    Ok(Conv2dGrads {
        input: gi.expect("input gradient requested"),
        weight: gw,
        bias: gb,
    })
}

pub(crate) fn conv2d_backward_impl(
    grad_out: &Tensor,
    input: &Tensor,
    weight: &Tensor,
    stride: usize,
    padding: usize,
    want_input: bool,
) -> Result<(Option<Tensor>, Tensor, Tensor)> {
    let g = Geometry::new(input, weight, stride, padding)?;
    if grad_out.shape() != [g.n, g.c_out, g.ho, g.wo] {
        return Err(shape_err(format!(
            "conv2d_backward: grad_out shape {:?}, expected {:?}",
            grad_out.shape(),
            [g.n, g.c_out, g.ho, g.wo]
        )));
    }
    let k = g.patch_len();
    let p = g.out_plane();
    let mut col = vec![0.0f32; k * p];
    let mut grad_col = vec![0.0f32; if want_input { k * p } else { 0 }];
    let mut gw = vec![0.0f32; g.c_out * k];
    let mut gb = vec![0.0f32; g.c_out];
    let mut gi = vec![0.0f32; if want_input { input.len() } else { 0 }];
    let x = input.data();
    for (s, go) in grad_out.data().chunks_exact(g.c_out * p).enumerate() {
        g.im2col(&x[s * g.in_sample()..(s + 1) * g.in_sample()], &mut col);
        for (o, plane) in go.chunks_exact(p).enumerate() {
            gb[o] += plane.iter().sum::<f32>();
        }
        // gw += go · colᵀ
        sgemm(
            g.c_out,
            p,
            k,
            go,
            Strides(p as isize, 1),
            &col,
            Strides(1, p as isize),
            1.0,
            &mut gw,
            Strides(k as isize, 1),
        );
        if want_input {
            // grad_col = Wᵀ · go
            sgemm(
                k,
                g.c_out,
                p,
                weight.data(),
                Strides(1, k as isize),
                go,
                Strides(p as isize, 1),
                0.0,
                &mut grad_col,
                Strides(p as isize, 1),
            );
            g.col2im(
                &grad_col,
                &mut gi[s * g.in_sample()..(s + 1) * g.in_sample()],
            );
        }
    }
    let gw = Tensor::from_parts(weight.shape().to_vec(), gw);
    let gb = Tensor::from_parts(vec![g.c_out], gb);
    gw.ensure_finite("conv2d_backward")?;
    gb.ensure_finite("conv2d_backward")?;
    let gi = if want_input {
        let t = Tensor::from_parts(input.shape().to_vec(), gi);
        t.ensure_finite("conv2d_backward")?;
        Some(t)
    } else {
        None
    };
    Ok((gi, gw, gb))
}
