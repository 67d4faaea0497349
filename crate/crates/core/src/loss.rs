//! Softmax and cross-entropy.

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Numerically stable softmax over the last axis.
pub fn softmax(z: &Tensor) -> Result<Tensor> {
    let cl = *z.shape().last().expect("rank >= 1");
    if cl < 2 {
        return Err(shape_err!("softmax needs at least 2 classes, got {cl}"));
    }
    let mut out = z.clone();
    for row in out.data_mut().chunks_mut(cl) {
        softmax_row(row);
    }
    Ok(out)
}

pub(crate) fn softmax_row(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

/// Mean negative log-likelihood of `labels` under `probs`, and the gradient
/// with respect to the logits that produced `probs`: `(probs - onehot) / N`.
pub fn cross_entropy_loss(probs: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    if probs.rank() != 2 {
        return Err(shape_err!("cross entropy expects [N, CL] probabilities, got {:?}", probs.shape()));
    }
    let (n, cl) = (probs.shape()[0], probs.shape()[1]);
    if labels.len() != n {
        return Err(Error::Input(format!("{} labels for a batch of {n}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= cl) {
        return Err(Error::Input(format!("label {bad} out of range for {cl} classes")));
    }
    let mut grad = probs.clone();
    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;
    for (i, (row, &label)) in grad.data_mut().chunks_mut(cl).zip(labels).enumerate() {
        loss -= probs.data()[i * cl + label].max(f64::MIN_POSITIVE).ln();
        row[label] -= 1.0;
        row.iter_mut().for_each(|g| *g *= inv_n);
    }
    Ok((loss * inv_n, grad))
}
