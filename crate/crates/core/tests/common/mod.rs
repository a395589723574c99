#![allow(dead_code)]

pub mod oracle;

use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use storyline_core::data::{SequenceFeatures, Story, EOS};
use storyline_core::model::{ModelDims, ModelParams};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform2(rng: &mut ChaCha8Rng, shape: (usize, usize), scale: f64) -> Array2<f64> {
    Array2::from_shape_fn(shape, |_| rng.gen_range(-scale..=scale))
}

pub fn random_features(rng: &mut ChaCha8Rng, n: usize, k: usize, d: usize, boxes: bool) -> SequenceFeatures {
    let regions = Array3::from_shape_fn((n, k, d), |_| rng.gen_range(-1.0..=1.0));
    let boxes = boxes.then(|| {
        Array3::from_shape_fn((n, k, 4), |_| rng.gen_range(0.0..=1.0))
    });
    SequenceFeatures::new(regions, boxes).unwrap()
}

/// Sentences of 1..=max_words non-reserved tokens, each closed by EOS.
pub fn random_story(rng: &mut ChaCha8Rng, n: usize, vocab: usize, max_words: usize) -> Story {
    let sentences = (0..n)
        .map(|_| {
            let len = rng.gen_range(1..=max_words);
            let mut s: Vec<usize> = (0..len).map(|_| rng.gen_range(4..vocab)).collect();
            s.push(EOS);
            s
        })
        .collect();
    Story::new((0..n).map(|i| format!("img{i}")).collect(), sentences).unwrap()
}

/// Random parameters with calibration scalars spread around one, so that
/// tests do not depend on the all-ones initialization.
pub fn random_params(rng: &mut ChaCha8Rng, dims: ModelDims, tied: bool) -> ModelParams {
    let mut p = ModelParams::random(dims, tied, rng);
    let n = dims.n;
    let spread = |a: &mut Array2<f64>, rng: &mut ChaCha8Rng| {
        a.mapv_inplace(|_| rng.gen_range(0.5..1.5));
    };
    spread(&mut p.calib.local, rng);
    spread(&mut p.calib.self_, rng);
    spread(&mut p.calib.current_pair, rng);
    spread(&mut p.calib.neighbor_pair, rng);
    p.calib.clear_unused();
    p.isa.alpha_local = Array1::from_shape_fn(n, |_| rng.gen_range(0.5..1.5));
    p.isa.alpha_self = Array1::from_shape_fn(n, |_| rng.gen_range(0.5..1.5));
    // Larger prior and gate weights so the bag-of-words path matters.
    p.decoder.prior_in = uniform2(rng, p.decoder.prior_in.dim(), 0.5);
    p.decoder.prior_out = uniform2(rng, p.decoder.prior_out.dim(), 0.5);
    p
}
