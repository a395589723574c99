//! Gated recurrent unit, gate rows stacked as `[reset; update; candidate]`:
//!
//! ```text
//! r  = sigmoid(Wx_r x + bx_r + Wh_r h + bh_r)
//! z  = sigmoid(Wx_z x + bx_z + Wh_z h + bh_z)
//! n  = tanh(Wx_n x + bx_n + r * (Wh_n h + bh_n))
//! h' = (1 - z) * n + z * h
//! ```

use ndarray::{s, Array1, Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{add_outer, sigmoid, uniform_vec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruParams {
    pub w_input: Array2<f64>,
    pub w_hidden: Array2<f64>,
    pub b_input: Array1<f64>,
    pub b_hidden: Array1<f64>,
}

impl GruParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        GruParams {
            w_input: Array2::zeros((3 * hidden, input)),
            w_hidden: Array2::zeros((3 * hidden, hidden)),
            b_input: Array1::zeros(3 * hidden),
            b_hidden: Array1::zeros(3 * hidden),
        }
    }

    /// Uniform in `±1/sqrt(hidden)` for every weight and bias.
    pub fn random<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let limit = 1.0 / (hidden as f64).sqrt();
        GruParams {
            w_input: Array2::from_shape_fn((3 * hidden, input), |_| rng.gen_range(-limit..=limit)),
            w_hidden: Array2::from_shape_fn((3 * hidden, hidden), |_| rng.gen_range(-limit..=limit)),
            b_input: uniform_vec(rng, 3 * hidden, limit),
            b_hidden: uniform_vec(rng, 3 * hidden, limit),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_hidden.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.w_input.ncols()
    }
}

#[derive(Debug, Clone)]
pub struct GruCache {
    input: Array1<f64>,
    hidden: Array1<f64>,
    reset: Array1<f64>,
    update: Array1<f64>,
    candidate: Array1<f64>,
    /// `Wh_n h + bh_n`
    hidden_candidate: Array1<f64>,
}

pub fn gru_step(input: ArrayView1<f64>, hidden: ArrayView1<f64>, params: &GruParams) -> Array1<f64> {
    gru_forward(input, hidden, params).0
}

pub fn gru_forward(input: ArrayView1<f64>, hidden: ArrayView1<f64>, params: &GruParams) -> (Array1<f64>, GruCache) {
    let h = params.hidden_dim();
    let ax = params.w_input.dot(&input) + &params.b_input;
    let ah = params.w_hidden.dot(&hidden) + &params.b_hidden;
    let reset = (&ax.slice(s![..h]) + &ah.slice(s![..h])).mapv(sigmoid);
    let update = (&ax.slice(s![h..2 * h]) + &ah.slice(s![h..2 * h])).mapv(sigmoid);
    let hidden_candidate = ah.slice(s![2 * h..]).to_owned();
    let candidate = (&ax.slice(s![2 * h..]) + &(&reset * &hidden_candidate)).mapv(f64::tanh);
    let next = &candidate + &(&update * &(&hidden - &candidate));
    let cache = GruCache {
        input: input.to_owned(),
        hidden: hidden.to_owned(),
        reset,
        update,
        candidate,
        hidden_candidate,
    };
    (next, cache)
}

/// Returns `(d_input, d_hidden_prev)` and accumulates parameter gradients.
pub fn gru_backward(
    cache: &GruCache,
    params: &GruParams,
    d_next: ArrayView1<f64>,
    grads: &mut GruParams,
) -> (Array1<f64>, Array1<f64>) {
    let h = params.hidden_dim();
    let one_minus_z = cache.update.mapv(|z| 1.0 - z);
    let d_candidate = &d_next * &one_minus_z;
    let d_update = &d_next * &(&cache.hidden - &cache.candidate);
    let mut d_hidden = &d_next * &cache.update;

    let d_an = &d_candidate * &cache.candidate.mapv(|n| 1.0 - n * n);
    let d_reset = &d_an * &cache.hidden_candidate;
    let d_hn = &d_an * &cache.reset;
    let d_az = &d_update * &cache.update.mapv(|z| z * (1.0 - z));
    let d_ar = &d_reset * &cache.reset.mapv(|r| r * (1.0 - r));

    let mut d_ax = Array1::zeros(3 * h);
    d_ax.slice_mut(s![..h]).assign(&d_ar);
    d_ax.slice_mut(s![h..2 * h]).assign(&d_az);
    d_ax.slice_mut(s![2 * h..]).assign(&d_an);
    let mut d_ah = d_ax.clone();
    d_ah.slice_mut(s![2 * h..]).assign(&d_hn);

    add_outer(grads.w_input.view_mut(), 1.0, d_ax.view(), cache.input.view());
    grads.b_input += &d_ax;
    add_outer(grads.w_hidden.view_mut(), 1.0, d_ah.view(), cache.hidden.view());
    grads.b_hidden += &d_ah;

    let d_input = params.w_input.t().dot(&d_ax);
    d_hidden += &params.w_hidden.t().dot(&d_ah);
    (d_input, d_hidden)
}
