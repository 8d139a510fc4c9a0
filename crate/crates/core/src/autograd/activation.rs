//! Parameter-free layers and the loss: ReLU, non-overlapping max pooling,
//! and softmax cross-entropy.

use crate::error::{argument, shape, Result};
use crate::tensor::{Matrix, Tensor4};

/// `max(x, 0)` plus the mask of positive entries needed by the backward pass.
pub fn relu_forward(x: &Tensor4) -> (Tensor4, Vec<bool>) {
    let mask: Vec<bool> = x.data().iter().map(|v| *v > 0.0).collect();
    let data = x.data().iter().map(|v| v.max(0.0)).collect();
    (Tensor4::new(x.dims(), data).expect("same dims"), mask)
}

pub fn relu_backward(gy: &Tensor4, mask: &[bool]) -> Result<Tensor4> {
    if gy.len() != mask.len() {
        return Err(shape(format!("relu mask has {} entries, gradient {}", mask.len(), gy.len())));
    }
    let data = gy.data().iter().zip(mask).map(|(g, m)| if *m { *g } else { 0.0 }).collect();
    Tensor4::new(gy.dims(), data)
}

/// Max pooling with a `size × size` window and stride `size`; trailing rows
/// and columns that do not fill a window are dropped. Returns the flat input
/// index of each window's maximum (first one on ties).
pub fn maxpool2d_forward(x: &Tensor4, size: usize) -> Result<(Tensor4, Vec<u32>)> {
    let [b, c, h, w] = x.dims();
    if size == 0 || size > h || size > w {
        return Err(argument(format!("pool size {size} invalid for {h}x{w} input")));
    }
    let (ho, wo) = (h / size, w / size);
    let mut y = Tensor4::zeros([b, c, ho, wo]);
    let mut argmax = Vec::with_capacity(b * c * ho * wo);
    let xd = x.data();
    let yd = y.data_mut();
    let mut out = 0;
    for plane in 0..b * c {
        for oh in 0..ho {
            for ow in 0..wo {
                let mut best = plane * h * w + oh * size * w + ow * size;
                for i in 0..size {
                    for j in 0..size {
                        let idx = plane * h * w + (oh * size + i) * w + ow * size + j;
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                }
                yd[out] = xd[best];
                argmax.push(best as u32);
                out += 1;
            }
        }
    }
    Ok((y, argmax))
}

pub fn maxpool2d_backward(gy: &Tensor4, argmax: &[u32], input_dims: [usize; 4]) -> Result<Tensor4> {
    if gy.len() != argmax.len() {
        return Err(shape(format!("pool indices have {} entries, gradient {}", argmax.len(), gy.len())));
    }
    let mut gx = Tensor4::zeros(input_dims);
    let gxd = gx.data_mut();
    for (g, &i) in gy.data().iter().zip(argmax) {
        let i = i as usize;
        if i >= gxd.len() {
            return Err(shape(format!("pool index {i} out of range")));
        }
        gxd[i] += g;
    }
    Ok(gx)
}

/// Mean cross-entropy of `softmax(logits)` against integer labels, and its
/// gradient `(softmax − one_hot) / B`.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let (b, classes) = (logits.rows(), logits.cols());
    if labels.len() != b {
        return Err(shape(format!("{} labels for a batch of {b}", labels.len())));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(argument(format!("label {bad} out of range for {classes} classes")));
    }
    let mut grad = Matrix::zeros(b, classes);
    let mut loss = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_sum = sum.ln() + max;
        loss += log_sum - row[label];
        for (j, v) in row.iter().enumerate() {
            let p = (v - log_sum).exp();
            let target = if j == label { 1.0 } else { 0.0 };
            grad.set(i, j, (p - target) / b as f64);
        }
    }
    Ok((loss / b as f64, grad))
}
