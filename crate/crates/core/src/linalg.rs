//! Small dense helpers shared by the attention and decoder modules.
//!
//! Everything runs in `f64`; the finite-difference checks rely on it.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1};
use rand::Rng;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Numerically stable softmax (max subtraction).
pub fn softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = logits.mapv(|l| (l - max).exp());
    let sum = out.sum();
    out /= sum;
    out
}

/// Backward pass of softmax: `d_logits = p * (d_p - <p, d_p>)`.
pub fn softmax_backward(probs: ArrayView1<f64>, d_probs: ArrayView1<f64>) -> Array1<f64> {
    let inner = probs.dot(&d_probs);
    let mut out = d_probs.to_owned();
    out -= inner;
    out *= &probs;
    out
}

/// Unit-normalized vector together with the norm of its input.
///
/// A zero input maps to the zero vector, so any cosine taken against it is 0.
#[derive(Debug, Clone)]
pub struct Normalized {
    pub unit: Array1<f64>,
    pub norm: f64,
}

impl Normalized {
    pub fn new(x: Array1<f64>) -> Self {
        let norm = x.dot(&x).sqrt();
        if norm > 0.0 {
            Normalized {
                unit: x / norm,
                norm,
            }
        } else {
            Normalized {
                unit: Array1::zeros(x.len()),
                norm: 0.0,
            }
        }
    }

    /// Gradient with respect to the unnormalized input.
    pub fn backward(&self, d_unit: ArrayView1<f64>) -> Array1<f64> {
        if self.norm == 0.0 {
            return Array1::zeros(d_unit.len());
        }
        let along = self.unit.dot(&d_unit);
        (&d_unit - &(&self.unit * along)) / self.norm
    }
}

/// Cosine similarity with the zero-vector convention of [`Normalized`].
pub fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        a.dot(&b) / (na * nb)
    }
}

/// `acc += scale * a b^T`
pub fn add_outer(mut acc: ndarray::ArrayViewMut2<f64>, scale: f64, a: ArrayView1<f64>, b: ArrayView1<f64>) {
    for (mut row, &ai) in acc.rows_mut().into_iter().zip(a.iter()) {
        let s = scale * ai;
        if s != 0.0 {
            row.scaled_add(s, &b);
        }
    }
}

/// `acc += m^T v`
pub fn add_transpose_matvec(mut acc: ArrayViewMut1<f64>, m: ArrayView2<f64>, v: ArrayView1<f64>) {
    for (row, &vi) in m.rows().into_iter().zip(v.iter()) {
        if vi != 0.0 {
            acc.scaled_add(vi, &row);
        }
    }
}

/// Uniform `[-limit, limit]` with `limit = sqrt(3 / fan_in)`, i.e. unit-variance
/// pre-activations for unit-variance inputs.
pub fn fan_in_uniform<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    let limit = (3.0 / cols.max(1) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-limit..=limit))
}

pub fn uniform_vec<R: Rng>(rng: &mut R, len: usize, limit: f64) -> Array1<f64> {
    Array1::from_shape_fn(len, |_| rng.gen_range(-limit..=limit))
}
