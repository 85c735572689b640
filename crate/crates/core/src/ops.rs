//! Small numerical helpers shared by the model layers.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Glorot-uniform matrix.
pub fn xavier(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..bound))
}

pub fn xavier_vec(len: usize, fan_in: usize, rng: &mut impl Rng) -> Array1<f64> {
    let bound = (6.0 / (len + fan_in) as f64).sqrt().min(1.0);
    Array1::from_shape_simple_fn(len, || rng.random_range(-bound..bound))
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`, else `1/(1-rate)`.
pub fn dropout_mask(shape: (usize, usize), rate: f64, rng: &mut impl Rng) -> Array2<f64> {
    let keep = 1.0 - rate;
    Array2::from_shape_simple_fn(shape, || if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
}

/// Row-wise softmax over the first `valid` columns; the rest are filled with exactly 0.
///
/// Masked columns receive an additive -1e9 before normalization, so they vanish in f64.
pub fn masked_softmax_rows(scores: &mut Array2<f64>, valid: usize) {
    const MASK: f64 = -1e9;
    for mut row in scores.axis_iter_mut(Axis(0)) {
        for v in row.iter_mut().skip(valid) {
            *v += MASK;
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Backward pass of a row softmax: `dS = A ⊙ (dA − rowsum(A ⊙ dA))`.
pub fn softmax_rows_backward(attention: &Array2<f64>, d_attention: &Array2<f64>) -> Array2<f64> {
    let mut out = attention * d_attention;
    for (mut row, a) in out.axis_iter_mut(Axis(0)).zip(attention.axis_iter(Axis(0))) {
        let s = row.sum();
        for (o, &p) in row.iter_mut().zip(a.iter()) {
            *o -= p * s;
        }
    }
    out
}

pub fn tanh_backward_inplace(grad: &mut Array2<f64>, activated: &Array2<f64>) {
    grad.zip_mut_with(activated, |g, &y| *g *= 1.0 - y * y);
}

pub fn outer(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let a2 = a.insert_axis(Axis(1));
    let b2 = b.insert_axis(Axis(0));
    &a2 * &b2
}
