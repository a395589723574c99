//! Image-sentence attention: weights the `N` attended image vectors of one
//! sentence and sums them into the sentence's context embedding. Only the
//! attended vectors of the same sentence interact.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{add_outer, add_transpose_matvec, fan_in_uniform, relu, softmax, softmax_backward, Normalized};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsaParams {
    pub self_left: Array2<f64>,
    pub self_right: Array2<f64>,
    pub local_proj: Array2<f64>,
    pub local_weights: Array1<f64>,
    /// Per-sentence scalar of the local factor.
    pub alpha_local: Array1<f64>,
    /// Per-sentence scalar of the self message.
    pub alpha_self: Array1<f64>,
}

impl IsaParams {
    pub fn zeros(n: usize, d: usize) -> Self {
        IsaParams {
            self_left: Array2::zeros((d, d)),
            self_right: Array2::zeros((d, d)),
            local_proj: Array2::zeros((d, d)),
            local_weights: Array1::zeros(d),
            alpha_local: Array1::zeros(n),
            alpha_self: Array1::zeros(n),
        }
    }

    pub fn random<R: Rng>(n: usize, d: usize, rng: &mut R) -> Self {
        IsaParams {
            self_left: fan_in_uniform(rng, d, d),
            self_right: fan_in_uniform(rng, d, d),
            local_proj: fan_in_uniform(rng, d, d),
            local_weights: fan_in_uniform(rng, 1, d).row(0).to_owned(),
            alpha_local: Array1::ones(n),
            alpha_self: Array1::ones(n),
        }
    }

    pub fn n(&self) -> usize {
        self.alpha_local.len()
    }

    fn local(&self, a: ArrayView1<f64>) -> (Array1<f64>, f64) {
        let pre = self.local_proj.dot(&a);
        let value = pre.iter().zip(self.local_weights.iter()).map(|(&z, &w)| w * relu(z)).sum();
        (pre, value)
    }
}

/// `sum_j cos(L a_i, R a_j)` over all attended vectors of the sentence.
pub fn isa_self_message(attended: ArrayView2<f64>, i: usize, params: &IsaParams) -> Result<f64> {
    if i >= attended.nrows() {
        return Err(Error::InvalidArgument(format!(
            "image index {i} out of range for {} images",
            attended.nrows()
        )));
    }
    let left = Normalized::new(params.self_left.dot(&attended.row(i)));
    Ok(attended
        .rows()
        .into_iter()
        .map(|a| left.unit.dot(&Normalized::new(params.self_right.dot(&a)).unit))
        .sum())
}

/// Context embedding and image weights for sentence `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextEmbedding {
    pub context: Array1<f64>,
    pub weights: Array1<f64>,
}

pub fn context_embedding(attended: ArrayView2<f64>, s: usize, params: &IsaParams) -> Result<ContextEmbedding> {
    if s >= params.n() {
        return Err(Error::SentenceIndex { index: s, n: params.n() });
    }
    let fwd = IsaForward::new(attended, s, params);
    Ok(ContextEmbedding {
        context: fwd.context.clone(),
        weights: fwd.weights.clone(),
    })
}

/// Cached forward pass for one sentence.
#[derive(Debug, Clone)]
pub struct IsaForward {
    s: usize,
    local_pre: Vec<Array1<f64>>,
    local: Array1<f64>,
    left: Vec<Normalized>,
    right: Vec<Normalized>,
    right_sum: Array1<f64>,
    self_msg: Array1<f64>,
    pub weights: Array1<f64>,
    pub context: Array1<f64>,
}

impl IsaForward {
    pub fn new(attended: ArrayView2<f64>, s: usize, params: &IsaParams) -> Self {
        let n = attended.nrows();
        let d = attended.ncols();
        let mut local_pre = Vec::with_capacity(n);
        let mut local = Array1::zeros(n);
        let mut left = Vec::with_capacity(n);
        let mut right = Vec::with_capacity(n);
        let mut right_sum = Array1::zeros(params.self_right.nrows());
        for (i, a) in attended.rows().into_iter().enumerate() {
            let (pre, value) = params.local(a);
            local_pre.push(pre);
            local[i] = value;
            left.push(Normalized::new(params.self_left.dot(&a)));
            let r = Normalized::new(params.self_right.dot(&a));
            right_sum += &r.unit;
            right.push(r);
        }
        let self_msg = Array1::from_iter(left.iter().map(|l| l.unit.dot(&right_sum)));
        let logits = &local * params.alpha_local[s] + &self_msg * params.alpha_self[s];
        let weights = softmax(logits.view());
        let mut context = Array1::zeros(d);
        for (i, a) in attended.rows().into_iter().enumerate() {
            context.scaled_add(weights[i], &a);
        }
        IsaForward {
            s,
            local_pre,
            local,
            left,
            right,
            right_sum,
            self_msg,
            weights,
            context,
        }
    }

    /// Accumulates parameter gradients and returns the gradient on the attended vectors.
    pub fn backward(
        &self,
        attended: ArrayView2<f64>,
        params: &IsaParams,
        d_context: ArrayView1<f64>,
        grads: &mut IsaParams,
    ) -> Array2<f64> {
        let n = attended.nrows();
        let d = attended.ncols();
        let s = self.s;
        let mut d_att = Array2::<f64>::zeros((n, d));
        let d_weights = attended.dot(&d_context);
        for i in 0..n {
            d_att.row_mut(i).scaled_add(self.weights[i], &d_context);
        }
        let d_logits = softmax_backward(self.weights.view(), d_weights.view());
        grads.alpha_local[s] += d_logits.dot(&self.local);
        grads.alpha_self[s] += d_logits.dot(&self.self_msg);

        let mut d_right_sum = Array1::<f64>::zeros(self.right_sum.len());
        for i in 0..n {
            let a = attended.row(i);
            // self message: left_i . right_sum
            let g_self = params.alpha_self[s] * d_logits[i];
            if g_self != 0.0 {
                let d_unit = &self.right_sum * g_self;
                d_right_sum.scaled_add(g_self, &self.left[i].unit);
                let d_pre = self.left[i].backward(d_unit.view());
                add_outer(grads.self_left.view_mut(), 1.0, d_pre.view(), a);
                add_transpose_matvec(d_att.row_mut(i), params.self_left.view(), d_pre.view());
            }
            // local factor
            let g_local = params.alpha_local[s] * d_logits[i];
            if g_local != 0.0 {
                let pre = &self.local_pre[i];
                let mut d_pre = Array1::<f64>::zeros(pre.len());
                for c in 0..pre.len() {
                    if pre[c] > 0.0 {
                        grads.local_weights[c] += g_local * pre[c];
                        d_pre[c] = g_local * params.local_weights[c];
                    }
                }
                add_outer(grads.local_proj.view_mut(), 1.0, d_pre.view(), a);
                add_transpose_matvec(d_att.row_mut(i), params.local_proj.view(), d_pre.view());
            }
        }
        if d_right_sum.iter().any(|&v| v != 0.0) {
            for j in 0..n {
                let d_pre = self.right[j].backward(d_right_sum.view());
                add_outer(grads.self_right.view_mut(), 1.0, d_pre.view(), attended.row(j));
                add_transpose_matvec(d_att.row_mut(j), params.self_right.view(), d_pre.view());
            }
        }
        d_att
    }
}
