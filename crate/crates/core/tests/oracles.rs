mod common;

use common::oracle::*;
use common::rng;
use rand::Rng;
use storyline_core::decoder::apply_repetition_penalty;
use storyline_core::history::{effective_counts, BowHistogram, StoryFrequencyTable};

const INSTANCES: u64 = 50;
const TOL: f64 = 1e-9;

#[test]
fn oia_matches_loops() {
    for seed in 0..INSTANCES {
        let e = oia_error(seed);
        assert!(e < TOL, "seed {seed}: {e}");
    }
}

#[test]
fn isa_matches_loops() {
    for seed in 0..INSTANCES {
        let e = isa_error(seed);
        assert!(e < TOL, "seed {seed}: {e}");
    }
}

#[test]
fn decoder_step_matches_loops() {
    for seed in 0..INSTANCES {
        let e = step_error(seed);
        assert!(e < TOL, "seed {seed}: {e}");
    }
}

#[test]
fn story_loss_matches_loops() {
    for seed in 0..INSTANCES {
        let e = loss_error(seed);
        assert!(e < TOL, "seed {seed}: {e}");
    }
}

#[test]
fn penalty_matches_loops() {
    for seed in 0..INSTANCES {
        let mut r = rng(seed);
        let vocab = r.gen_range(4..10);
        let raw: Vec<f64> = (0..vocab).map(|_| r.gen_range(0.01..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let probs: Vec<f64> = raw.iter().map(|p| p / total).collect();
        let mut hist = BowHistogram::new(vocab);
        for _ in 0..r.gen_range(0..10) {
            hist.update(r.gen_range(0..vocab));
        }
        let rho: Vec<f64> = (0..vocab).map(|_| r.gen_range(1.0..3.0)).collect();
        let pi = r.gen_range(0.0..4.0);
        let table = StoryFrequencyTable::from_values(rho.clone());
        let lib = apply_repetition_penalty(ndarray::ArrayView1::from(&probs), &effective_counts(&hist, &table), pi).unwrap();
        let counts: Vec<f64> = hist.counts().iter().map(|&c| c as f64).collect();
        let naive = penalize(&probs, &counts, &rho, pi);
        for (a, b) in lib.iter().zip(&naive) {
            assert!((a - b).abs() < TOL);
        }
    }
}
