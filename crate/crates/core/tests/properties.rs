mod common;

use common::*;
use ndarray::{s, Array1, Array2, Array3, Axis};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use storyline_core::data::SequenceFeatures;
use storyline_core::decoder::{bow_prior, word_distribution, DecoderOptions};
use storyline_core::history::{BowHistogram, StoryFrequencyTable};
use storyline_core::isa::context_embedding;
use storyline_core::model::{story_loss, Ablations, ModelDims, ModelParams};
use storyline_core::oia::{all_attention_maps, attention_beliefs};
use storyline_core::{beam_search, DecodeSettings};

fn dims(n: usize, d: usize) -> ModelDims {
    ModelDims { n, d, vocab: 12, embed: 4, gamma: 3, box_input: None }
}

/// Reorders images of `features` so that slot `i` holds image `perm[i]`.
fn permute(features: &SequenceFeatures, perm: &[usize]) -> SequenceFeatures {
    let (n, k, d) = features.regions().dim();
    let mut regions = Array3::zeros((n, k, d));
    for (i, &p) in perm.iter().enumerate() {
        regions.slice_mut(s![i, .., ..]).assign(&features.image(p));
    }
    SequenceFeatures::new(regions, None).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn beliefs_and_isa_weights_are_distributions(seed in any::<u64>(), n in 1usize..5, k in 1usize..6, d in 2usize..8) {
        let mut rng = rng(seed);
        let tied = rng.gen_bool(0.5);
        let params = random_params(&mut rng, dims(n, d), tied);
        let features = random_features(&mut rng, n, k, d, false);
        let pass = params.contexts(&features, &Ablations::default()).unwrap();
        for b in pass.maps.0.lanes(Axis(2)) {
            prop_assert!(b.iter().all(|&v| v >= 0.0));
            prop_assert!((b.sum() - 1.0).abs() < 1e-6);
        }
        for w in pass.isa_weights.rows() {
            prop_assert!(w.iter().all(|&v| v >= 0.0));
            prop_assert!((w.sum() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn context_stays_inside_attended_envelope(seed in any::<u64>(), n in 1usize..5, d in 2usize..8) {
        let mut rng = rng(seed);
        let params = random_params(&mut rng, dims(n, d), false);
        let a = uniform2(&mut rng, (n, d), 2.0);
        for s in 0..n {
            let c = context_embedding(a.view(), s, &params.isa).unwrap().context;
            for (col, &v) in c.iter().enumerate() {
                let column = a.column(col);
                let lo = column.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn context_reads_only_its_own_sentence(seed in any::<u64>(), n in 2usize..5, d in 2usize..6) {
        let mut rng = rng(seed);
        let params = random_params(&mut rng, dims(n, d), false);
        let attended = Array3::from_shape_fn((n, n, d), |_| rng.gen_range(-1.0..1.0));
        let s = rng.gen_range(0..n);
        let other = (s + 1 + rng.gen_range(0..n - 1)) % n;
        let before = context_embedding(attended.slice(s![s, .., ..]), s, &params.isa).unwrap();
        let mut changed = attended.clone();
        changed.slice_mut(s![other, .., ..]).mapv_inplace(|v| v * 3.0 + 1.0);
        let after = context_embedding(changed.slice(s![s, .., ..]), s, &params.isa).unwrap();
        prop_assert_eq!(before, after);
    }

    #[test]
    fn swapping_preceding_and_subsequent_images_changes_current_beliefs(seed in any::<u64>(), n in 3usize..6, k in 2usize..5) {
        let mut rng = rng(seed);
        let d = 6;
        let params = random_params(&mut rng, dims(n, d), false);
        let features = random_features(&mut rng, n, k, d, false);
        let s = rng.gen_range(1..n - 1);
        let j = rng.gen_range(0..s);
        let j2 = rng.gen_range(s + 1..n);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.swap(j, j2);
        let a = attention_beliefs(&features, s, &params.oia, &params.calib).unwrap();
        let b = attention_beliefs(&permute(&features, &perm), s, &params.oia, &params.calib).unwrap();
        let diff = (&a.row(s) - &b.row(s)).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
        prop_assert!(diff > 1e-6, "diff {}", diff);
    }

    #[test]
    fn tied_directions_make_current_beliefs_order_free(seed in any::<u64>(), n in 2usize..6, k in 1usize..5) {
        let mut rng = rng(seed);
        let d = 5;
        let mut params = random_params(&mut rng, dims(n, d), true);
        let features = random_features(&mut rng, n, k, d, false);
        let s = rng.gen_range(0..n);
        let alpha = rng.gen_range(0.5..1.5);
        for j in 0..n {
            if j != s {
                params.calib.current_pair[[s, j]] = alpha;
            }
        }
        let mut others: Vec<usize> = (0..n).filter(|&j| j != s).collect();
        others.shuffle(&mut rng);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut it = others.into_iter();
        for (i, p) in perm.iter_mut().enumerate() {
            if i != s {
                *p = it.next().unwrap();
            }
        }
        let a = attention_beliefs(&features, s, &params.oia, &params.calib).unwrap();
        let b = attention_beliefs(&permute(&features, &perm), s, &params.oia, &params.calib).unwrap();
        for (x, y) in a.row(s).iter().zip(b.row(s).iter()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn bow_prior_is_linear(seed in any::<u64>(), a in proptest::collection::vec(0usize..12, 0..10), b in proptest::collection::vec(0usize..12, 0..10)) {
        let mut rng = rng(seed);
        let params = random_params(&mut rng, dims(2, 4), false);
        let ha = BowHistogram::from_sentences(12, &[a.clone()]);
        let hb = BowHistogram::from_sentences(12, &[b.clone()]);
        let hab = BowHistogram::from_sentences(12, &[a, b]);
        let sum = bow_prior(&ha, &params.decoder) + bow_prior(&hb, &params.decoder);
        let joint = bow_prior(&hab, &params.decoder);
        for (x, y) in sum.iter().zip(joint.iter()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn word_distribution_is_positive_and_normalized(seed in any::<u64>(), prev in 0usize..12, use_prior in any::<bool>()) {
        let mut rng = rng(seed);
        let params = random_params(&mut rng, dims(2, 4), false);
        let h = Array1::from_shape_fn(4, |_| rng.gen_range(-1.0..1.0));
        let c = Array1::from_shape_fn(4, |_| rng.gen_range(-1.0..1.0));
        let hist = BowHistogram::from_sentences(12, &[vec![4, 5, 5, 9]]);
        let out = word_distribution(prev, h.view(), c.view(), &hist, &params.decoder, DecoderOptions { use_prior, fixed_gate: None }).unwrap();
        prop_assert!((out.probs.sum() - 1.0).abs() < 1e-9);
        prop_assert!(out.probs.iter().all(|&p| p > 0.0));
        prop_assert!(out.beta > 0.0 && out.beta < 1.0 || !use_prior);
    }

    #[test]
    fn beam_search_is_deterministic(seed in any::<u64>(), width in 1usize..5) {
        let mut rng = rng(seed);
        let params = random_params(&mut rng, dims(2, 4), false);
        let c = Array1::from_shape_fn(4, |_| rng.gen_range(-1.0..1.0));
        let table = StoryFrequencyTable::uniform(12);
        let settings = DecodeSettings { width, max_len: 6, ..Default::default() };
        let init = BowHistogram::from_sentences(12, &[vec![4, 6]]);
        let a = beam_search(c.view(), &init, &params.decoder, &table, &settings).unwrap();
        let b = beam_search(c.view(), &init, &params.decoder, &table, &settings).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn loss_is_finite_and_positive(seed in any::<u64>(), n in 1usize..4) {
        let mut rng = rng(seed);
        let params = random_params(&mut rng, dims(n, 4), false);
        let features = random_features(&mut rng, n, 3, 4, false);
        let story = random_story(&mut rng, n, 12, 4);
        let l = story_loss(&params, &features, &story, &Ablations::default()).unwrap();
        prop_assert!(l.total.is_finite() && l.total > 0.0);
    }
}

#[test]
fn ablations_replace_attention_with_averages() {
    let mut rng = rng(5);
    let (n, k, d) = (3, 4, 5);
    let params: ModelParams = random_params(&mut rng, dims(n, d), false);
    let features = random_features(&mut rng, n, k, d, false);
    let no_oia = params.contexts(&features, &Ablations { no_oia: true, ..Default::default() }).unwrap();
    let means = features.region_means();
    for s in 0..n {
        assert_eq!(no_oia.attended.sentence(s), means.view());
    }
    let no_isa = params.contexts(&features, &Ablations { no_isa: true, ..Default::default() }).unwrap();
    let full = params.contexts(&features, &Ablations::default()).unwrap();
    assert_eq!(no_isa.attended, full.attended);
    for s in 0..n {
        let mean = full.attended.sentence(s).mean_axis(Axis(0)).unwrap();
        assert!((&no_isa.contexts.row(s) - &mean).iter().all(|v| v.abs() < 1e-15));
    }
    let both = params.contexts(&features, &Ablations { no_oia: true, no_isa: true, ..Default::default() }).unwrap();
    let grand: Array1<f64> = means.mean_axis(Axis(0)).unwrap();
    for s in 0..n {
        assert!((&both.contexts.row(s) - &grand).iter().all(|v| v.abs() < 1e-15));
    }
}

#[test]
fn all_maps_agree_with_single_sentence_beliefs() {
    let mut rng = rng(8);
    let params = random_params(&mut rng, dims(4, 5), false);
    let features = random_features(&mut rng, 4, 3, 5, false);
    let (maps, _) = all_attention_maps(&features, &params.oia, &params.calib).unwrap();
    for s in 0..4 {
        let b: Array2<f64> = attention_beliefs(&features, s, &params.oia, &params.calib).unwrap();
        assert_eq!(maps.sentence(s), b.view());
    }
}
