//! Straight-loop reimplementations of the model's forward computations,
//! written from the model definition rather than the library's cached passes.

#![allow(dead_code)]

use ndarray::{Array1, Array2};
use storyline_core::data::{SequenceFeatures, Story, BOS, EOS, PAD};
use storyline_core::decoder::DecoderParams;
use storyline_core::isa::IsaParams;
use storyline_core::model::ModelParams;

pub fn matvec(m: &Array2<f64>, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m.nrows()];
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out[r] += m[[r, c]] * x[c];
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let mut max = f64::NEG_INFINITY;
    for &v in x {
        if v > max {
            max = v;
        }
    }
    let mut e = Vec::with_capacity(x.len());
    let mut total = 0.0;
    for &v in x {
        let t = (v - max).exp();
        e.push(t);
        total += t;
    }
    for v in e.iter_mut() {
        *v /= total;
    }
    e
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn local(proj: &Array2<f64>, weights: &Array1<f64>, r: &[f64]) -> f64 {
    let z = matvec(proj, r);
    let mut s = 0.0;
    for c in 0..z.len() {
        s += weights[c] * z[c].max(0.0);
    }
    s
}

/// `sum_k' cos(L target, R source_k')`
fn message(left: &Array2<f64>, right: &Array2<f64>, target: &[f64], source: &[Vec<f64>]) -> f64 {
    let l = matvec(left, target);
    let mut s = 0.0;
    for src in source {
        s += cosine(&l, &matvec(right, src));
    }
    s
}

pub fn regions(features: &SequenceFeatures) -> Vec<Vec<Vec<f64>>> {
    let (n, k, _) = features.regions().dim();
    (0..n)
        .map(|i| (0..k).map(|r| features.region(i, r).to_vec()).collect())
        .collect()
}

/// Beliefs `[s][i][k]`.
pub fn oia_beliefs(features: &SequenceFeatures, p: &ModelParams) -> Vec<Vec<Vec<f64>>> {
    let r = regions(features);
    let n = r.len();
    let k = r[0].len();
    let w = &p.oia;
    let c = &p.calib;
    let (bwd_l, bwd_r) = if w.tied { (&w.fwd_left, &w.fwd_right) } else { (&w.bwd_left, &w.bwd_right) };
    let mut out = vec![vec![vec![0.0; k]; n]; n];
    for s in 0..n {
        for i in 0..n {
            let mut logits = vec![0.0; k];
            for kk in 0..k {
                let x = &r[i][kk];
                let mut v = c.local[[s, i]] * local(&w.local_proj, &w.local_weights, x);
                v += c.self_[[s, i]] * message(&w.self_left, &w.self_right, x, &r[i]);
                if i == s {
                    for j in 0..n {
                        if j < i {
                            v += c.current_pair[[s, j]] * message(bwd_l, bwd_r, x, &r[j]);
                        } else if j > i {
                            v += c.current_pair[[s, j]] * message(&w.fwd_left, &w.fwd_right, x, &r[j]);
                        }
                    }
                } else if i < s {
                    v += c.neighbor_pair[[s, i]] * message(bwd_l, bwd_r, x, &r[s]);
                } else {
                    v += c.neighbor_pair[[s, i]] * message(&w.fwd_left, &w.fwd_right, x, &r[s]);
                }
                logits[kk] = v;
            }
            out[s][i] = softmax(&logits);
        }
    }
    out
}

/// Attended vectors `[s][i][d]`.
pub fn attended(features: &SequenceFeatures, beliefs: &[Vec<Vec<f64>>]) -> Vec<Vec<Vec<f64>>> {
    let r = regions(features);
    let d = r[0][0].len();
    beliefs
        .iter()
        .map(|per_s| {
            per_s
                .iter()
                .enumerate()
                .map(|(i, b)| {
                    let mut a = vec![0.0; d];
                    for (kk, &bk) in b.iter().enumerate() {
                        for c in 0..d {
                            a[c] += bk * r[i][kk][c];
                        }
                    }
                    a
                })
                .collect()
        })
        .collect()
}

/// ISA weights and context for sentence `s`.
pub fn isa(attended: &[Vec<f64>], s: usize, p: &IsaParams) -> (Vec<f64>, Vec<f64>) {
    let n = attended.len();
    let mut logits = vec![0.0; n];
    for i in 0..n {
        let mut self_msg = 0.0;
        let l = matvec(&p.self_left, &attended[i]);
        for j in 0..n {
            self_msg += cosine(&l, &matvec(&p.self_right, &attended[j]));
        }
        logits[i] = p.alpha_local[s] * local(&p.local_proj, &p.local_weights, &attended[i]) + p.alpha_self[s] * self_msg;
    }
    let w = softmax(&logits);
    let d = attended[0].len();
    let mut ctx = vec![0.0; d];
    for i in 0..n {
        for c in 0..d {
            ctx[c] += w[i] * attended[i][c];
        }
    }
    (w, ctx)
}

/// Full attention stack: contexts `[s][d]`.
pub fn contexts(features: &SequenceFeatures, p: &ModelParams) -> Vec<Vec<f64>> {
    let b = oia_beliefs(features, p);
    let a = attended(features, &b);
    (0..a.len()).map(|s| isa(&a[s], s, &p.isa).1).collect()
}

pub fn gru(x: &[f64], h: &[f64], dec: &DecoderParams) -> Vec<f64> {
    let g = &dec.gru;
    let hd = h.len();
    let xi = matvec(&g.w_input, x);
    let hh = matvec(&g.w_hidden, h);
    let mut out = vec![0.0; hd];
    for u in 0..hd {
        let r = sigmoid(xi[u] + g.b_input[u] + hh[u] + g.b_hidden[u]);
        let z = sigmoid(xi[hd + u] + g.b_input[hd + u] + hh[hd + u] + g.b_hidden[hd + u]);
        let cand = (xi[2 * hd + u] + g.b_input[2 * hd + u] + r * (hh[2 * hd + u] + g.b_hidden[2 * hd + u])).tanh();
        out[u] = (1.0 - z) * cand + z * h[u];
    }
    out
}

/// Next-token distribution, new hidden state and gate value.
pub fn step(prev: usize, h: &[f64], ctx: &[f64], counts: &[f64], dec: &DecoderParams, use_prior: bool) -> (Vec<f64>, Vec<f64>, f64) {
    let mut x = dec.embedding.row(prev).to_vec();
    x.extend_from_slice(ctx);
    let h_new = gru(&x, h, dec);
    let g = matvec(&dec.output, &h_new);
    if !use_prior {
        return (softmax(&g), h_new, 1.0);
    }
    let q = matvec(&dec.prior_in, counts);
    let f = matvec(&dec.prior_out, &q);
    let a = matvec(&dec.gate_hidden, &h_new);
    let b = matvec(&dec.gate_prior, &q);
    let mut gate_in = 0.0;
    for c in 0..a.len() {
        gate_in += dec.gate_weights[c] * (a[c] + b[c]).tanh();
    }
    let beta = sigmoid(gate_in);
    let logits: Vec<f64> = (0..g.len()).map(|t| beta * g[t] + (1.0 - beta) * f[t]).collect();
    (softmax(&logits), h_new, beta)
}

fn countable(t: usize) -> bool {
    t != PAD && t != BOS && t != EOS
}

/// Teacher-forced negative log-likelihood of the whole story.
pub fn story_loss(p: &ModelParams, features: &SequenceFeatures, story: &Story, use_prior: bool) -> f64 {
    let ctx = contexts(features, p);
    let vocab = p.dims.vocab;
    let mut counts = vec![0.0; vocab];
    let mut loss = 0.0;
    for (s, sentence) in story.sentences().iter().enumerate() {
        let mut h = vec![0.0; p.decoder.hidden_dim()];
        let mut prev = BOS;
        for &t in sentence {
            let (probs, h_new, _) = step(prev, &h, &ctx[s], &counts, &p.decoder, use_prior);
            loss -= probs[t].ln();
            if countable(t) {
                counts[t] += 1.0;
            }
            h = h_new;
            prev = t;
        }
    }
    loss
}

/// `p(w) / (pi * max(0, phi(w) - rho(w) + 1) + 1)`, renormalized.
pub fn penalize(probs: &[f64], counts: &[f64], rho: &[f64], pi: f64) -> Vec<f64> {
    let mut out: Vec<f64> = (0..probs.len())
        .map(|w| {
            let eff = (counts[w] - rho[w] + 1.0).max(0.0);
            probs[w] / (pi * eff + 1.0)
        })
        .collect();
    let total: f64 = out.iter().sum();
    for v in out.iter_mut() {
        *v /= total;
    }
    out
}

/// A tiny random model, its inputs and a story, drawn from `seed`.
pub struct Instance {
    pub params: ModelParams,
    pub features: SequenceFeatures,
    pub story: Story,
}

pub fn instance(seed: u64) -> Instance {
    use rand::Rng;
    use storyline_core::model::ModelDims;
    let mut rng = super::rng(seed);
    let n = rng.gen_range(1..=4);
    let k = rng.gen_range(1..=4);
    let d = rng.gen_range(2..=6);
    let dims = ModelDims {
        n,
        d,
        vocab: rng.gen_range(6..=12),
        embed: rng.gen_range(2..=5),
        gamma: rng.gen_range(2..=4),
        box_input: None,
    };
    let tied = rng.gen_bool(0.5);
    let params = super::random_params(&mut rng, dims, tied);
    let features = super::random_features(&mut rng, n, k, d, false);
    let story = super::random_story(&mut rng, n, dims.vocab, 4);
    Instance { params, features, story }
}

fn max_abs(a: impl IntoIterator<Item = f64>, b: impl IntoIterator<Item = f64>) -> f64 {
    a.into_iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest deviation of the library's beliefs and attended vectors from the loops.
pub fn oia_error(seed: u64) -> f64 {
    let inst = instance(seed);
    let p = &inst.params;
    let (maps, att) = storyline_core::oia::all_attention_maps(&inst.features, &p.oia, &p.calib).unwrap();
    let b = oia_beliefs(&inst.features, p);
    let a = attended(&inst.features, &b);
    let e1 = max_abs(maps.0.iter().copied(), b.iter().flatten().flatten().copied());
    let e2 = max_abs(att.0.iter().copied(), a.iter().flatten().flatten().copied());
    e1.max(e2)
}

pub fn isa_error(seed: u64) -> f64 {
    use rand::Rng;
    let inst = instance(seed);
    let p = &inst.params;
    let mut rng = super::rng(seed ^ 0xabcd);
    let (n, d) = (p.dims.n, p.dims.d);
    let a = Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0));
    let rows: Vec<Vec<f64>> = a.rows().into_iter().map(|r| r.to_vec()).collect();
    let mut worst: f64 = 0.0;
    for s in 0..n {
        let lib = storyline_core::isa::context_embedding(a.view(), s, &p.isa).unwrap();
        let (w, c) = isa(&rows, s, &p.isa);
        worst = worst
            .max(max_abs(lib.weights.iter().copied(), w))
            .max(max_abs(lib.context.iter().copied(), c));
    }
    worst
}

/// Compares one decoding step from a random state, with and without the prior.
pub fn step_error(seed: u64) -> f64 {
    use rand::Rng;
    use storyline_core::decoder::{word_distribution, DecoderOptions};
    use storyline_core::history::BowHistogram;
    let inst = instance(seed);
    let dec = &inst.params.decoder;
    let mut rng = super::rng(seed ^ 0x5151);
    let vocab = dec.vocab_size();
    let h: Vec<f64> = (0..dec.hidden_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let ctx: Vec<f64> = (0..inst.params.dims.d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut hist = BowHistogram::new(vocab);
    for _ in 0..rng.gen_range(0..8) {
        hist.update(rng.gen_range(0..vocab));
    }
    let counts: Vec<f64> = hist.counts().iter().map(|&c| c as f64).collect();
    let prev = rng.gen_range(0..vocab);
    let mut worst: f64 = 0.0;
    for use_prior in [true, false] {
        let options = DecoderOptions { use_prior, fixed_gate: None };
        let lib = word_distribution(prev, Array1::from(h.clone()).view(), Array1::from(ctx.clone()).view(), &hist, dec, options).unwrap();
        let (probs, h_new, beta) = step(prev, &h, &ctx, &counts, dec, use_prior);
        worst = worst
            .max(max_abs(lib.probs.iter().copied(), probs))
            .max(max_abs(lib.hidden.iter().copied(), h_new))
            .max((lib.beta - beta).abs());
    }
    worst
}

pub fn loss_error(seed: u64) -> f64 {
    use storyline_core::model::{story_loss as lib_loss, Ablations};
    let inst = instance(seed);
    let mut worst: f64 = 0.0;
    for no_prior in [false, true] {
        let ablations = Ablations { no_prior, ..Ablations::default() };
        let lib = lib_loss(&inst.params, &inst.features, &inst.story, &ablations).unwrap();
        let naive = story_loss(&inst.params, &inst.features, &inst.story, !no_prior);
        worst = worst.max((lib.total - naive).abs());
    }
    worst
}

/// Best finished sentence of at most `max_len` tokens by brute-force
/// enumeration: highest summed log-probability under the penalized,
/// renormalized distribution, then shorter, then smaller token ids.
pub fn exhaustive_best(ctx: &[f64], init: &[f64], dec: &DecoderParams, rho: &[f64], pi: f64, max_len: usize) -> Vec<usize> {
    let vocab = dec.vocab_size();
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut stack = vec![(Vec::<usize>::new(), 0.0, vec![0.0; dec.hidden_dim()], init.to_vec())];
    while let Some((prefix, lp, h, counts)) = stack.pop() {
        if prefix.len() == max_len {
            continue;
        }
        let prev = prefix.last().copied().unwrap_or(BOS);
        let (probs, h_new, _) = step(prev, &h, ctx, &counts, dec, true);
        let probs = if pi > 0.0 { penalize(&probs, &counts, rho, pi) } else { probs };
        for t in 0..vocab {
            if t == PAD || t == BOS {
                continue;
            }
            let mut seq = prefix.clone();
            seq.push(t);
            let score = lp + probs[t].ln();
            if t == EOS {
                let better = match &best {
                    None => true,
                    Some((b, bs)) => score > *b || (score == *b && (seq.len(), &seq) < (bs.len(), bs)),
                };
                if better {
                    best = Some((score, seq));
                }
            } else {
                let mut c = counts.clone();
                c[t] += 1.0;
                stack.push((seq, score, h_new.clone(), c));
            }
        }
    }
    best.expect("EOS is always reachable").1
}

/// Compares beam search of width `6^3` with brute force on one random model
/// over a 6-word vocabulary.
pub fn beam_matches_exhaustive(seed: u64) -> bool {
    use rand::Rng;
    use storyline_core::history::{BowHistogram, StoryFrequencyTable};
    use storyline_core::model::ModelDims;
    use storyline_core::{beam_search, DecodeSettings};
    let mut rng = super::rng(seed);
    let dims = ModelDims { n: 1, d: 4, vocab: 6, embed: 3, gamma: 2, box_input: None };
    let mut params = super::random_params(&mut rng, dims, false);
    // Sharper logits make the search space less flat.
    params.decoder.output.mapv_inplace(|v| v * 4.0);
    let ctx: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let rho: Vec<f64> = (0..6).map(|_| rng.gen_range(1.0..2.0)).collect();
    let mut init = BowHistogram::new(6);
    for _ in 0..rng.gen_range(0..3) {
        init.update(rng.gen_range(4..6));
    }
    let settings = DecodeSettings { width: 216, max_len: 3, ..Default::default() };
    let table = StoryFrequencyTable::from_values(rho.clone());
    let beam = beam_search(Array1::from(ctx.clone()).view(), &init, &params.decoder, &table, &settings).unwrap();
    let counts: Vec<f64> = init.counts().iter().map(|&c| c as f64).collect();
    let brute = exhaustive_best(&ctx, &counts, &params.decoder, &rho, settings.penalty, 3);
    beam.finished && beam.tokens == brute
}
