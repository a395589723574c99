use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{SequenceFeatures, Story};
use crate::error::Result;
use crate::model::{story_loss, story_loss_and_grad, Ablations, ModelParams};

/// Default number of sampled coordinates per tensor.
pub const SAMPLES_PER_TENSOR: usize = 200;

/// Denominator floor of the relative error, so that coordinates whose true
/// gradient vanishes are judged by absolute error.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    /// Flat index of the worst coordinate.
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub step: f64,
    pub tolerance: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tolerance
    }
}

/// Compares `analytic` against central differences of `loss` on a random
/// subsample of every tensor (all coordinates when a tensor is smaller than
/// `samples`).
pub fn check_gradients<F>(
    params: &ModelParams,
    analytic: &ModelParams,
    loss: F,
    step: f64,
    tolerance: f64,
    samples: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&ModelParams) -> Result<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = params.clone();
    let mut tensors = Vec::new();
    let analytic_views = analytic.tensors();
    for (t, (name, grad)) in analytic_views.iter().enumerate() {
        let len = grad.len();
        let grad: Vec<f64> = grad.iter().copied().collect();
        let picks = sample(&mut rng, len, samples.min(len)).into_vec();
        let mut check = TensorCheck {
            name: name.to_string(),
            checked: picks.len(),
            max_rel_error: 0.0,
            worst_index: 0,
            worst_analytic: 0.0,
            worst_numeric: 0.0,
        };
        for idx in picks {
            let original = coordinate(&mut probe, t, idx, None);
            coordinate(&mut probe, t, idx, Some(original + step));
            let plus = loss(&probe)?;
            coordinate(&mut probe, t, idx, Some(original - step));
            let minus = loss(&probe)?;
            coordinate(&mut probe, t, idx, Some(original));
            let numeric = (plus - minus) / (2.0 * step);
            let err = relative_error(grad[idx], numeric);
            if err > check.max_rel_error || err.is_nan() {
                check.max_rel_error = if err.is_nan() { f64::INFINITY } else { err };
                check.worst_index = idx;
                check.worst_analytic = grad[idx];
                check.worst_numeric = numeric;
            }
        }
        tensors.push(check);
    }
    Ok(GradCheckReport { step, tolerance, tensors })
}

/// Reads coordinate `idx` of tensor number `t` in logical order, optionally
/// overwriting it.
fn coordinate(params: &mut ModelParams, t: usize, idx: usize, set: Option<f64>) -> f64 {
    let mut views = params.tensors_mut();
    let view = &mut views[t].1;
    let shape = view.shape().to_vec();
    let mut rest = idx;
    let mut index = vec![0; shape.len()];
    for (axis, &dim) in shape.iter().enumerate().rev() {
        index[axis] = rest % dim;
        rest /= dim;
    }
    let slot = &mut view[index.as_slice()];
    let old = *slot;
    if let Some(v) = set {
        *slot = v;
    }
    old
}

/// Gradient check of the full story loss with dropout off.
pub fn gradient_check(
    params: &ModelParams,
    features: &SequenceFeatures,
    story: &Story,
    ablations: &Ablations,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let analytic = story_gradient(params, features, story, ablations)?;
    check_gradients(
        params,
        &analytic,
        |p| Ok(story_loss(p, features, story, ablations)?.total),
        step,
        tolerance,
        SAMPLES_PER_TENSOR,
        0,
    )
}

/// Analytic gradient of the summed story loss.
pub fn story_gradient(
    params: &ModelParams,
    features: &SequenceFeatures,
    story: &Story,
    ablations: &Ablations,
) -> Result<ModelParams> {
    let mut grads = params.zeros_like();
    story_loss_and_grad(params, features, story, ablations, None, 1.0, &mut grads)?;
    Ok(grads)
}
