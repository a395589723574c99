use ndarray::{Array1, ArrayView1};

use crate::error::{Error, Result};

/// `p(w) / (pi * phi'(w) + 1)` without renormalization.
pub fn penalized_scores(probs: ArrayView1<f64>, effective_counts: &[f64], pi: f64) -> Result<Array1<f64>> {
    if !(pi >= 0.0) {
        return Err(Error::InvalidArgument(format!("penalty must be >= 0, got {pi}")));
    }
    if effective_counts.len() != probs.len() {
        return Err(Error::Shape(format!(
            "{} effective counts for {} probabilities",
            effective_counts.len(),
            probs.len()
        )));
    }
    Ok(Array1::from_iter(
        probs
            .iter()
            .zip(effective_counts)
            .map(|(&p, &c)| p / (pi * c + 1.0)),
    ))
}

/// Divides every probability by `pi * phi'(w) + 1` and renormalizes.
pub fn apply_repetition_penalty(probs: ArrayView1<f64>, effective_counts: &[f64], pi: f64) -> Result<Array1<f64>> {
    let mut scores = penalized_scores(probs, effective_counts, pi)?;
    let total = scores.sum();
    scores /= total;
    Ok(scores)
}
