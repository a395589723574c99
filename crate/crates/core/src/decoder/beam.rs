use std::cmp::Ordering;

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use super::{apply_repetition_penalty, word_distribution, DecoderOptions, DecoderParams, StepOutput};
use crate::data::{BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::history::{effective_counts, BowHistogram, StoryFrequencyTable};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeSettings {
    pub width: usize,
    pub max_len: usize,
    /// Repetition penalty `pi`; 0 disables it.
    pub penalty: f64,
    /// Subtract the story frequency before penalizing; when off every word is
    /// penalized from its second use on.
    pub count_norm: bool,
    pub options: DecoderOptions,
}

impl Default for DecodeSettings {
    fn default() -> Self {
        DecodeSettings {
            width: 3,
            max_len: 30,
            penalty: 2.0,
            count_norm: true,
            options: DecoderOptions::default(),
        }
    }
}

impl DecodeSettings {
    /// Word distribution after the repetition penalty, plus the raw step output.
    pub fn step(
        &self,
        prev: usize,
        hidden: ArrayView1<f64>,
        context: ArrayView1<f64>,
        histogram: &BowHistogram,
        params: &DecoderParams,
        table: &StoryFrequencyTable,
    ) -> Result<(Array1<f64>, StepOutput)> {
        let out = word_distribution(prev, hidden, context, histogram, params, self.options)?;
        if self.penalty == 0.0 {
            return Ok((out.probs.clone(), out));
        }
        let counts = if self.count_norm {
            effective_counts(histogram, table)
        } else {
            histogram.counts().iter().map(|&c| c as f64).collect()
        };
        let penalized = apply_repetition_penalty(out.probs.view(), &counts, self.penalty)?;
        Ok((penalized, out))
    }

    /// Tokens a hypothesis may be extended with.
    pub fn can_emit(token: usize) -> bool {
        token != PAD && token != BOS
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamResult {
    /// Generated tokens, ending in EOS when `finished`.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub betas: Vec<f64>,
    pub finished: bool,
}

#[derive(Debug, Clone)]
struct Hypothesis {
    tokens: Vec<usize>,
    log_prob: f64,
    hidden: Array1<f64>,
    histogram: BowHistogram,
    betas: Vec<f64>,
}

/// Higher log-probability first, then shorter, then lexicographically smaller.
fn rank(a_lp: f64, a_tokens: &[usize], b_lp: f64, b_tokens: &[usize]) -> Ordering {
    b_lp.total_cmp(&a_lp)
        .then_with(|| a_tokens.len().cmp(&b_tokens.len()))
        .then_with(|| a_tokens.cmp(b_tokens))
}

/// Beam search over the penalized, renormalized word distribution. Each
/// hypothesis carries its own histogram, seeded from `init`.
pub fn beam_search(
    context: ArrayView1<f64>,
    init: &BowHistogram,
    params: &DecoderParams,
    table: &StoryFrequencyTable,
    settings: &DecodeSettings,
) -> Result<BeamResult> {
    if settings.width == 0 || settings.max_len == 0 {
        return Err(Error::InvalidArgument("beam width and max_len must be at least 1".into()));
    }
    let mut alive = vec![Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        hidden: Array1::zeros(params.hidden_dim()),
        histogram: init.clone(),
        betas: Vec::new(),
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for _ in 0..settings.max_len {
        let mut candidates: Vec<(usize, usize, f64, Vec<usize>)> = Vec::new();
        let mut outputs = Vec::with_capacity(alive.len());
        for (h_idx, hyp) in alive.iter().enumerate() {
            let prev = hyp.tokens.last().copied().unwrap_or(BOS);
            let (probs, out) = settings.step(prev, hyp.hidden.view(), context, &hyp.histogram, params, table)?;
            for (tok, &p) in probs.iter().enumerate() {
                if p > 0.0 && DecodeSettings::can_emit(tok) {
                    let mut seq = hyp.tokens.clone();
                    seq.push(tok);
                    candidates.push((h_idx, tok, hyp.log_prob + p.ln(), seq));
                }
            }
            outputs.push(out);
        }
        candidates.sort_by(|a, b| rank(a.2, &a.3, b.2, &b.3));
        candidates.truncate(settings.width);

        let mut next = Vec::with_capacity(candidates.len());
        for (h_idx, tok, log_prob, tokens) in candidates {
            let parent = &alive[h_idx];
            let out = &outputs[h_idx];
            let mut betas = parent.betas.clone();
            betas.push(out.beta);
            let hyp = Hypothesis {
                tokens,
                log_prob,
                hidden: out.hidden.clone(),
                histogram: parent.histogram.clone().with(tok),
                betas,
            };
            if tok == EOS {
                finished.push(hyp);
            } else {
                next.push(hyp);
            }
        }
        alive = next;
        if alive.is_empty() {
            break;
        }
        // Extensions never raise the log-probability, so once the best
        // finished hypothesis outranks every live one it is final.
        if let Some(best) = finished.iter().min_by(|a, b| rank(a.log_prob, &a.tokens, b.log_prob, &b.tokens)) {
            if alive.iter().all(|h| best.log_prob >= h.log_prob) {
                break;
            }
        }
    }

    let pick = |pool: Vec<Hypothesis>, finished: bool| {
        pool.into_iter()
            .min_by(|a, b| rank(a.log_prob, &a.tokens, b.log_prob, &b.tokens))
            .map(|h| BeamResult {
                tokens: h.tokens,
                log_prob: h.log_prob,
                betas: h.betas,
                finished,
            })
    };
    Ok(match pick(finished, true) {
        Some(r) => r,
        None => pick(alive, false).expect("beam keeps at least one hypothesis"),
    })
}
