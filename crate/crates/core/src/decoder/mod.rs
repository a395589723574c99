//! Story decoder: a GRU language unit mixed with a bag-of-words prior through
//! a learned gate, plus repetition-penalized beam search.
//!
//! At each step the GRU consumes `concat(embedding(prev), context)` and its
//! new hidden state feeds both the output projection and the gate.

mod beam;
mod gru;
mod penalty;

pub use beam::{beam_search, BeamResult, DecodeSettings};
pub use gru::{gru_backward, gru_forward, gru_step, GruCache, GruParams};
pub use penalty::{apply_repetition_penalty, penalized_scores};

use ndarray::{s, Array1, Array2, ArrayView1};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::BOS;
use crate::error::{Error, Result};
use crate::history::BowHistogram;
use crate::linalg::{add_outer, add_transpose_matvec, fan_in_uniform, sigmoid, softmax, uniform_vec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderParams {
    /// `|Y| × d_e`
    pub embedding: Array2<f64>,
    /// Input `d_e + d`, hidden `d`.
    pub gru: GruParams,
    /// `|Y| × d`
    pub output: Array2<f64>,
    /// `γ × |Y|`
    pub prior_in: Array2<f64>,
    /// `|Y| × γ`
    pub prior_out: Array2<f64>,
    /// `d × d`
    pub gate_hidden: Array2<f64>,
    /// `d × γ`
    pub gate_prior: Array2<f64>,
    /// `d`
    pub gate_weights: Array1<f64>,
}

impl DecoderParams {
    pub fn zeros(vocab: usize, embed: usize, d: usize, gamma: usize) -> Self {
        DecoderParams {
            embedding: Array2::zeros((vocab, embed)),
            gru: GruParams::zeros(embed + d, d),
            output: Array2::zeros((vocab, d)),
            prior_in: Array2::zeros((gamma, vocab)),
            prior_out: Array2::zeros((vocab, gamma)),
            gate_hidden: Array2::zeros((d, d)),
            gate_prior: Array2::zeros((d, gamma)),
            gate_weights: Array1::zeros(d),
        }
    }

    pub fn random<R: Rng>(vocab: usize, embed: usize, d: usize, gamma: usize, rng: &mut R) -> Self {
        DecoderParams {
            embedding: Array2::from_shape_fn((vocab, embed), |_| rng.gen_range(-0.5..=0.5)),
            gru: GruParams::random(embed + d, d, rng),
            output: fan_in_uniform(rng, vocab, d),
            prior_in: fan_in_uniform(rng, gamma, vocab),
            prior_out: Array2::zeros((vocab, gamma)),
            gate_hidden: fan_in_uniform(rng, d, d),
            gate_prior: fan_in_uniform(rng, d, gamma),
            gate_weights: uniform_vec(rng, d, (3.0 / d as f64).sqrt()),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.nrows()
    }

    pub fn embed_dim(&self) -> usize {
        self.embedding.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.gru.hidden_dim()
    }

    pub fn bottleneck(&self) -> usize {
        self.prior_in.nrows()
    }

    /// `W1 phi`, summing only the nonzero histogram entries.
    pub fn prior_hidden(&self, histogram: &BowHistogram) -> Array1<f64> {
        let mut q = Array1::zeros(self.bottleneck());
        for (t, c) in histogram.nonzero() {
            q.scaled_add(c, &self.prior_in.column(t));
        }
        q
    }

    fn check_token(&self, token: usize) -> Result<()> {
        if token >= self.vocab_size() {
            return Err(Error::UnknownToken {
                id: token,
                size: self.vocab_size(),
            });
        }
        Ok(())
    }
}

/// Mixing switches: `use_prior = false` drops the prior and fixes the gate at 1;
/// `fixed_gate` bypasses the learned gate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoderOptions {
    pub use_prior: bool,
    pub fixed_gate: Option<f64>,
}

impl Default for DecoderOptions {
    fn default() -> Self {
        DecoderOptions {
            use_prior: true,
            fixed_gate: None,
        }
    }
}

/// `W2 (W1 phi)`, no bias and no activation.
pub fn bow_prior(histogram: &BowHistogram, params: &DecoderParams) -> Array1<f64> {
    params.prior_out.dot(&params.prior_hidden(histogram))
}

/// `sigmoid(v^T tanh(G_g h + G_f W1 phi))`
pub fn gate(hidden: ArrayView1<f64>, histogram: &BowHistogram, params: &DecoderParams) -> f64 {
    let q = params.prior_hidden(histogram);
    gate_from_parts(hidden, q.view(), params).0
}

fn gate_from_parts(hidden: ArrayView1<f64>, q: ArrayView1<f64>, params: &DecoderParams) -> (f64, Array1<f64>) {
    let tau = (params.gate_hidden.dot(&hidden) + params.gate_prior.dot(&q)).mapv(f64::tanh);
    (sigmoid(params.gate_weights.dot(&tau)), tau)
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub probs: Array1<f64>,
    pub hidden: Array1<f64>,
    pub beta: f64,
    /// Mixed logits before the softmax.
    pub logits: Array1<f64>,
}

/// One decoding step: next-token distribution and the new hidden state.
pub fn word_distribution(
    prev_token: usize,
    hidden: ArrayView1<f64>,
    context: ArrayView1<f64>,
    histogram: &BowHistogram,
    params: &DecoderParams,
    options: DecoderOptions,
) -> Result<StepOutput> {
    params.check_token(prev_token)?;
    let input = step_input(params, prev_token, context);
    let new_hidden = gru_step(input.view(), hidden, &params.gru);
    let g = params.output.dot(&new_hidden);
    let (beta, logits) = if options.use_prior {
        let q = params.prior_hidden(histogram);
        let f = params.prior_out.dot(&q);
        let beta = match options.fixed_gate {
            Some(b) => b,
            None => gate_from_parts(new_hidden.view(), q.view(), params).0,
        };
        (beta, &g * beta + &f * (1.0 - beta))
    } else {
        (1.0, g)
    };
    Ok(StepOutput {
        probs: softmax(logits.view()),
        hidden: new_hidden,
        beta,
        logits,
    })
}

fn step_input(params: &DecoderParams, prev_token: usize, context: ArrayView1<f64>) -> Array1<f64> {
    let e = params.embed_dim();
    let mut input = Array1::zeros(e + context.len());
    input.slice_mut(s![..e]).assign(&params.embedding.row(prev_token));
    input.slice_mut(s![e..]).assign(&context);
    input
}

/// Inverted dropout with its own random stream.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub rate: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(rate: f64, rng: ChaCha8Rng) -> Self {
        Dropout { rate, rng }
    }

    fn mask(&mut self, len: usize) -> Option<Array1<f64>> {
        if self.rate <= 0.0 {
            return None;
        }
        let keep = 1.0 - self.rate;
        Some(Array1::from_shape_fn(len, |_| {
            if self.rng.gen::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        }))
    }
}

#[derive(Debug, Clone)]
struct StepTrace {
    prev: usize,
    target: usize,
    histogram: BowHistogram,
    input_mask: Option<Array1<f64>>,
    output_mask: Option<Array1<f64>>,
    gru: GruCache,
    hidden: Array1<f64>,
    hidden_out: Array1<f64>,
    q: Array1<f64>,
    tau: Array1<f64>,
    beta: f64,
    g: Array1<f64>,
    f: Array1<f64>,
    probs: Array1<f64>,
}

/// Teacher-forced pass over one sentence, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct SentencePass {
    steps: Vec<StepTrace>,
    options: DecoderOptions,
    /// Summed negative log-likelihood of the sentence's tokens.
    pub loss: f64,
}

impl SentencePass {
    /// `tokens` is the target sentence ending in EOS; the first input is BOS.
    /// `history` holds the counts of earlier sentences and is advanced with
    /// each target token.
    pub fn forward(
        params: &DecoderParams,
        context: ArrayView1<f64>,
        history: &BowHistogram,
        tokens: &[usize],
        options: DecoderOptions,
        mut dropout: Option<&mut Dropout>,
    ) -> Result<Self> {
        for &t in tokens {
            params.check_token(t)?;
        }
        let d = params.hidden_dim();
        let mut hidden = Array1::<f64>::zeros(d);
        let mut histogram = history.clone();
        let mut prev = BOS;
        let mut steps = Vec::with_capacity(tokens.len());
        let mut loss = 0.0;
        for &target in tokens {
            let mut input = step_input(params, prev, context);
            let input_mask = dropout.as_deref_mut().and_then(|dr| dr.mask(input.len()));
            if let Some(m) = &input_mask {
                input *= m;
            }
            let (new_hidden, gru_cache) = gru_forward(input.view(), hidden.view(), &params.gru);
            let output_mask = dropout.as_deref_mut().and_then(|dr| dr.mask(d));
            let hidden_out = match &output_mask {
                Some(m) => &new_hidden * m,
                None => new_hidden.clone(),
            };
            let g = params.output.dot(&hidden_out);
            let (q, f, tau, beta) = if options.use_prior {
                let q = params.prior_hidden(&histogram);
                let f = params.prior_out.dot(&q);
                let (learned, tau) = gate_from_parts(new_hidden.view(), q.view(), params);
                let beta = options.fixed_gate.unwrap_or(learned);
                (q, f, tau, beta)
            } else {
                let vocab = params.vocab_size();
                (Array1::zeros(0), Array1::zeros(vocab), Array1::zeros(0), 1.0)
            };
            let logits = &g * beta + &f * (1.0 - beta);
            let probs = softmax(logits.view());
            loss -= probs[target].ln();
            steps.push(StepTrace {
                prev,
                target,
                histogram: histogram.clone(),
                input_mask,
                output_mask,
                gru: gru_cache,
                hidden: new_hidden.clone(),
                hidden_out,
                q,
                tau,
                beta,
                g,
                f,
                probs,
            });
            histogram.update(target);
            hidden = new_hidden;
            prev = target;
        }
        Ok(SentencePass { steps, options, loss })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Gradient of `scale * loss`; accumulates into `grads` and returns the
    /// gradient with respect to the context vector.
    pub fn backward(&self, params: &DecoderParams, scale: f64, grads: &mut DecoderParams) -> Array1<f64> {
        let d = params.hidden_dim();
        let e = params.embed_dim();
        let mut d_context = Array1::<f64>::zeros(params.gru.input_dim() - e);
        let mut d_hidden_next = Array1::<f64>::zeros(d);
        let learned_gate = self.options.use_prior && self.options.fixed_gate.is_none();
        for step in self.steps.iter().rev() {
            let mut d_logits = step.probs.clone() * scale;
            d_logits[step.target] -= scale;
            let d_g = &d_logits * step.beta;

            add_outer(grads.output.view_mut(), 1.0, d_g.view(), step.hidden_out.view());
            let mut d_hidden_out = params.output.t().dot(&d_g);
            if let Some(m) = &step.output_mask {
                d_hidden_out *= m;
            }
            let mut d_hidden = d_hidden_next + &d_hidden_out;

            if self.options.use_prior {
                let d_f = &d_logits * (1.0 - step.beta);
                add_outer(grads.prior_out.view_mut(), 1.0, d_f.view(), step.q.view());
                let mut d_q = params.prior_out.t().dot(&d_f);
                if learned_gate {
                    let d_beta = d_logits.dot(&(&step.g - &step.f));
                    let d_u = d_beta * step.beta * (1.0 - step.beta);
                    grads.gate_weights.scaled_add(d_u, &step.tau);
                    let d_pre = &params.gate_weights * &step.tau.mapv(|t| 1.0 - t * t) * d_u;
                    add_outer(grads.gate_hidden.view_mut(), 1.0, d_pre.view(), step.hidden.view());
                    add_transpose_matvec(d_hidden.view_mut(), params.gate_hidden.view(), d_pre.view());
                    add_outer(grads.gate_prior.view_mut(), 1.0, d_pre.view(), step.q.view());
                    add_transpose_matvec(d_q.view_mut(), params.gate_prior.view(), d_pre.view());
                }
                for (t, c) in step.histogram.nonzero() {
                    grads.prior_in.column_mut(t).scaled_add(c, &d_q);
                }
            }

            let (mut d_input, d_prev) = gru_backward(&step.gru, &params.gru, d_hidden.view(), &mut grads.gru);
            if let Some(m) = &step.input_mask {
                d_input *= m;
            }
            grads.embedding.row_mut(step.prev).scaled_add(1.0, &d_input.slice(s![..e]));
            d_context += &d_input.slice(s![e..]);
            d_hidden_next = d_prev;
        }
        d_context
    }

    /// Gate values used at each step.
    pub fn betas(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.beta).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn setup(seed: u64) -> (DecoderParams, Array1<f64>, Array1<f64>, BowHistogram) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = DecoderParams::random(6, 4, 4, 2, &mut rng);
        let h = uniform_vec(&mut rng, 4, 1.0);
        let c = uniform_vec(&mut rng, 4, 1.0);
        let hist = BowHistogram::new(6).with(4).with(4).with(5);
        (p, h, c, hist)
    }

    #[test]
    fn prior_is_linear_and_zero_at_zero() {
        let (p, _, _, hist) = setup(1);
        assert!(bow_prior(&BowHistogram::new(6), &p).iter().all(|&v| v == 0.0));
        let h1 = BowHistogram::new(6).with(4);
        let h2 = BowHistogram::new(6).with(4).with(5);
        let sum = &bow_prior(&h1, &p) + &bow_prior(&h2, &p);
        let joint = bow_prior(&hist, &p);
        assert!((&sum - &joint).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn gate_is_half_with_zero_weights_and_saturates() {
        let (mut p, h, _, hist) = setup(2);
        p.gate_weights.fill(0.0);
        assert_eq!(gate(h.view(), &hist, &p), 0.5);
        let q = p.prior_hidden(&hist);
        let tau = (p.gate_hidden.dot(&h) + p.gate_prior.dot(&q)).mapv(f64::tanh);
        p.gate_weights = tau.clone() * 1e4;
        assert!(gate(h.view(), &hist, &p) > 1.0 - 1e-9);
    }

    #[test]
    fn fixed_gate_endpoints() {
        let (p, h, c, hist) = setup(3);
        let one = word_distribution(4, h.view(), c.view(), &hist, &p, DecoderOptions { use_prior: true, fixed_gate: Some(1.0) }).unwrap();
        let g = p.output.dot(&one.hidden);
        let expect = softmax(g.view());
        assert!((&one.probs - &expect).iter().all(|v| v.abs() < 1e-15));

        let zero = word_distribution(4, h.view(), c.view(), &hist, &p, DecoderOptions { use_prior: true, fixed_gate: Some(0.0) }).unwrap();
        let expect = softmax(bow_prior(&hist, &p).view());
        assert!((&zero.probs - &expect).iter().all(|v| v.abs() < 1e-15));

        let no_prior = word_distribution(4, h.view(), c.view(), &hist, &p, DecoderOptions { use_prior: false, fixed_gate: None }).unwrap();
        assert_eq!(no_prior.beta, 1.0);
        assert!((&no_prior.probs - &one.probs).iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn distribution_sums_to_one_and_is_positive() {
        let (p, h, c, hist) = setup(4);
        let out = word_distribution(5, h.view(), c.view(), &hist, &p, DecoderOptions::default()).unwrap();
        assert!((out.probs.sum() - 1.0).abs() < 1e-12);
        assert!(out.probs.iter().all(|&v| v > 0.0));
        assert!(out.beta > 0.0 && out.beta < 1.0);
        assert!(word_distribution(6, h.view(), c.view(), &hist, &p, DecoderOptions::default()).is_err());
    }

    #[test]
    fn sentence_pass_rejects_unknown_token() {
        let (p, _, c, hist) = setup(5);
        let err = SentencePass::forward(&p, c.view(), &hist, &[4, 9], DecoderOptions::default(), None);
        assert!(matches!(err, Err(Error::UnknownToken { id: 9, size: 6 })));
    }

    #[test]
    fn sentence_pass_matches_stepwise_distribution() {
        let (p, _, c, hist) = setup(6);
        let tokens = [4, 5, 4, crate::data::EOS];
        let pass = SentencePass::forward(&p, c.view(), &hist, &tokens, DecoderOptions::default(), None).unwrap();
        let mut h = Array1::zeros(4);
        let mut running = hist.clone();
        let mut prev = BOS;
        let mut loss = 0.0;
        for &t in &tokens {
            let out = word_distribution(prev, h.view(), c.view(), &running, &p, DecoderOptions::default()).unwrap();
            loss -= out.probs[t].ln();
            h = out.hidden;
            running.update(t);
            prev = t;
        }
        assert!((pass.loss - loss).abs() < 1e-12);
    }
}
