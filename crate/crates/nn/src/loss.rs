//! Scalar losses. Each returns `(mean loss, dLoss/dInput)`.

use crate::activation::sigmoid;
use crate::tensor::Tensor;

/// Row-wise softmax of a `[n, classes]` tensor.
pub fn softmax(logits: &Tensor) -> Tensor {
    let (_, k) = logits.dims2();
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k) {
        let m = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    out
}

/// Softmax followed by cross-entropy against integer class labels.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> (f32, Tensor) {
    let (n, k) = logits.dims2();
    assert_eq!(n, labels.len(), "label count does not match batch");
    let mut grad = softmax(logits);
    let mut loss = 0.0f64;
    for (row, &y) in grad.data_mut().chunks_mut(k).zip(labels) {
        assert!(y < k, "label {y} out of range for {k} classes");
        loss -= (row[y].max(1e-12) as f64).ln();
        row[y] -= 1.0;
        row.iter_mut().for_each(|v| *v /= n as f32);
    }
    ((loss / n as f64) as f32, grad)
}

/// Numerically stable sigmoid binary cross-entropy on logits; targets in [0, 1].
pub fn bce_with_logits(logits: &Tensor, targets: &Tensor) -> (f32, Tensor) {
    assert_eq!(logits.shape(), targets.shape(), "bce shape mismatch");
    let n = logits.len() as f32;
    let mut loss = 0.0f64;
    let mut grad = Tensor::zeros(logits.shape());
    for ((g, &z), &t) in grad
        .data_mut()
        .iter_mut()
        .zip(logits.data())
        .zip(targets.data())
    {
        loss += (z.max(0.0) - z * t + (-z.abs()).exp().ln_1p()) as f64;
        *g = (sigmoid(z) - t) / n;
    }
    ((loss / n as f64) as f32, grad)
}

/// BCE against a constant target, as used for adversarial real/fake labels.
pub fn bce_with_logits_const(logits: &Tensor, target: f32) -> (f32, Tensor) {
    bce_with_logits(logits, &Tensor::full(logits.shape(), target))
}

pub fn mse(pred: &Tensor, target: &Tensor) -> (f32, Tensor) {
    assert_eq!(pred.shape(), target.shape(), "mse shape mismatch");
    let n = pred.len() as f32;
    let mut loss = 0.0f64;
    let mut grad = Tensor::zeros(pred.shape());
    for ((g, &p), &t) in grad
        .data_mut()
        .iter_mut()
        .zip(pred.data())
        .zip(target.data())
    {
        let d = p - t;
        loss += (d * d) as f64;
        *g = 2.0 * d / n;
    }
    ((loss / n as f64) as f32, grad)
}

/// Mean absolute error; the subgradient at zero difference is 0.
pub fn l1(pred: &Tensor, target: &Tensor) -> (f32, Tensor) {
    assert_eq!(pred.shape(), target.shape(), "l1 shape mismatch");
    let n = pred.len() as f32;
    let mut loss = 0.0f64;
    let mut grad = Tensor::zeros(pred.shape());
    for ((g, &p), &t) in grad
        .data_mut()
        .iter_mut()
        .zip(pred.data())
        .zip(target.data())
    {
        let d = p - t;
        loss += d.abs() as f64;
        *g = if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        };
    }
    ((loss / n as f64) as f32, grad)
}
