use serde::{Deserialize, Serialize};

use crate::model::ModelParams;

/// Adam with bias correction. Moments have the same layout as the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    pub first: ModelParams,
    pub second: ModelParams,
}

impl Adam {
    pub fn new(params: &ModelParams, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Adam {
            beta1,
            beta2,
            epsilon,
            step: 0,
            first: params.zeros_like(),
            second: params.zeros_like(),
        }
    }

    pub fn update(&mut self, params: &mut ModelParams, grads: &ModelParams, learning_rate: f64) {
        self.step += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        let c1 = 1.0 - b1.powi(self.step.min(i32::MAX as u64) as i32);
        let c2 = 1.0 - b2.powi(self.step.min(i32::MAX as u64) as i32);
        let grads = grads.tensors();
        let firsts = self.first.tensors_mut();
        let seconds = self.second.tensors_mut();
        for ((((_, mut p), (_, g)), (_, mut m)), (_, mut v)) in
            params.tensors_mut().into_iter().zip(grads).zip(firsts).zip(seconds)
        {
            ndarray::Zip::from(&mut p).and(&g).and(&mut m).and(&mut v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= learning_rate * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
        params.normalize_structure();
    }
}
