use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use storyline_core::data::{generate_synthetic_sequence, ToyLanguage};
use storyline_core::history::init_histogram;
use storyline_core::model::{story_loss_and_grad, Ablations, ModelDims, ModelParams};
use storyline_core::oia::all_attention_maps;
use storyline_core::{beam_search, DecodeSettings, StoryFrequencyTable};

const THEMES: usize = 8;

fn setup(n: usize, k: usize, d: usize) -> (ModelParams, storyline_core::SequenceFeatures, storyline_core::Story) {
    let (features, story) = generate_synthetic_sequence(1, n, k, d, THEMES).unwrap();
    let vocab = ToyLanguage::new(THEMES).vocabulary().len();
    let dims = ModelDims { n, d, vocab, embed: d, gamma: 16, box_input: None };
    let params = ModelParams::random(dims, false, &mut ChaCha8Rng::seed_from_u64(2));
    (params, features, story)
}

fn oia_forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("oia_forward");
    for (k, d) in [(6, 32), (36, 64)] {
        let (params, features, _) = setup(5, k, d);
        group.bench_with_input(BenchmarkId::from_parameter(format!("k{k}_d{d}")), &(), |b, _| {
            b.iter(|| all_attention_maps(&features, &params.oia, &params.calib).unwrap())
        });
    }
    group.finish();
}

fn loss_and_grad(c: &mut Criterion) {
    let (params, features, story) = setup(5, 6, 32);
    let mut grads = params.zeros_like();
    c.bench_function("story_loss_and_grad", |b| {
        b.iter(|| story_loss_and_grad(&params, &features, &story, &Ablations::default(), None, 1.0, &mut grads).unwrap())
    });
}

fn beam(c: &mut Criterion) {
    let (params, features, story) = setup(5, 6, 32);
    let pass = params.contexts(&features, &Ablations::default()).unwrap();
    let table = StoryFrequencyTable::uniform(params.dims.vocab);
    let init = init_histogram(params.dims.vocab, &story.sentences()[..2]);
    let mut group = c.benchmark_group("beam_search");
    for width in [1, 3, 10] {
        let settings = DecodeSettings { width, max_len: 12, ..Default::default() };
        group.bench_with_input(BenchmarkId::from_parameter(width), &settings, |b, s| {
            b.iter(|| beam_search(pass.contexts.row(2), &init, &params.decoder, &table, s).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, oia_forward, loss_and_grad, beam);
criterion_main!(benches);
