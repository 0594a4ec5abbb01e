//! Loss heads. The scalar loss is computed and returned in `f64`; gradients are `f32`.

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Mean softmax cross-entropy over the batch and its gradient `(softmax - onehot) / N`.
pub fn softmax_ce_loss(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    logits.expect_rank(2, "softmax_ce_loss logits")?;
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != n {
        return Err(shape_err(format!(
            "softmax_ce_loss: {} labels for batch of {n}",
            labels.len()
        )));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange { label, classes: k });
    }
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0f64;
    let mut grad = Vec::with_capacity(n * k);
    for (row, &label) in logits.data().chunks_exact(k).zip(labels) {
        let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
        let sum_exp: f64 = row.iter().map(|&v| (v as f64 - max).exp()).sum();
        let log_z = max + sum_exp.ln();
        total += log_z - row[label] as f64;
        for (c, &v) in row.iter().enumerate() {
            let p = (v as f64 - log_z).exp();
            let onehot = if c == label { 1.0 } else { 0.0 };
            grad.push(((p - onehot) * inv_n) as f32);
        }
    }
    let loss = total * inv_n;
    if !loss.is_finite() {
        return Err(Error::NonFinite("softmax_ce_loss"));
    }
    Ok((loss, Tensor::from_parts(vec![n, k], grad)))
}

/// Mean binary cross-entropy on `sigmoid(logits)` over all `N * K` entries.
///
/// Uses `max(x, 0) - x*y + ln(1 + exp(-|x|))`, which never overflows.
pub fn sigmoid_bce_loss(logits: &Tensor, labels: &Tensor) -> Result<(f64, Tensor)> {
    logits.expect_rank(2, "sigmoid_bce_loss logits")?;
    if labels.shape() != logits.shape() {
        return Err(shape_err(format!(
            "sigmoid_bce_loss: labels {:?} vs logits {:?}",
            labels.shape(),
            logits.shape()
        )));
    }
    if let Some(&value) = labels.data().iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(Error::NonBinaryLabel { value });
    }
    let inv = 1.0 / logits.len() as f64;
    let mut total = 0.0f64;
    let mut grad = Vec::with_capacity(logits.len());
    for (&x, &y) in logits.data().iter().zip(labels.data()) {
        let (x, y) = (x as f64, y as f64);
        total += x.max(0.0) - x * y + (-x.abs()).exp().ln_1p();
        let sig = if x >= 0.0 {
            1.0 / (1.0 + (-x).exp())
        } else {
            let e = x.exp();
            e / (1.0 + e)
        };
        grad.push(((sig - y) * inv) as f32);
    }
    let loss = total * inv;
    if !loss.is_finite() {
        return Err(Error::NonFinite("sigmoid_bce_loss"));
    }
    Ok((loss, Tensor::from_parts(logits.shape().to_vec(), grad)))
}
