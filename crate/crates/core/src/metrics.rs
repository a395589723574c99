//! Repetition statistics over generated stories.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::vocab::{BOS, EOS, PAD};

/// Largest n-gram order in the text repetition rate.
pub const MAX_NGRAM: usize = 4;

fn content_tokens(story: &[Vec<usize>]) -> Vec<usize> {
    story
        .iter()
        .flatten()
        .copied()
        .filter(|&t| t != PAD && t != BOS && t != EOS)
        .collect()
}

/// Fraction of distinct n-grams that occur more than once; `None` when the
/// text has no n-gram of that order.
pub fn ngram_repetition(tokens: &[usize], n: usize) -> Option<f64> {
    if n == 0 || tokens.len() < n {
        return None;
    }
    let mut counts: HashMap<&[usize], usize> = HashMap::new();
    for w in tokens.windows(n) {
        *counts.entry(w).or_default() += 1;
    }
    let repeated = counts.values().filter(|&&c| c > 1).count();
    Some(repeated as f64 / counts.len() as f64)
}

/// Geometric mean of the 1- to 4-gram repetition fractions over the
/// concatenated story. Orders with no n-grams are left out; an empty story
/// scores 0.
pub fn repetition_rate(story: &[Vec<usize>]) -> f64 {
    let tokens = content_tokens(story);
    let rates: Vec<f64> = (1..=MAX_NGRAM).filter_map(|n| ngram_repetition(&tokens, n)).collect();
    if rates.is_empty() {
        return 0.0;
    }
    if rates.iter().any(|&r| r == 0.0) {
        return 0.0;
    }
    (rates.iter().map(|r| r.ln()).sum::<f64>() / rates.len() as f64).exp()
}

/// Number of sentences that exactly equal an earlier sentence of the story.
pub fn sentence_repetition(story: &[Vec<usize>]) -> usize {
    let sentences: Vec<Vec<usize>> = story
        .iter()
        .map(|s| s.iter().copied().filter(|&t| t != PAD && t != BOS && t != EOS).collect())
        .collect();
    (0..sentences.len())
        .filter(|&i| sentences[..i].contains(&sentences[i]))
        .count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionReport {
    pub stories: usize,
    /// Mean repetition rate over stories.
    pub text_repetition: f64,
    /// Mean count of repeated sentences per story.
    pub sentence_repetition: f64,
    pub per_story: Vec<StoryRepetition>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoryRepetition {
    pub text_repetition: f64,
    pub sentence_repetition: usize,
}

pub fn corpus_report<S: AsRef<[Vec<usize>]>>(stories: &[S]) -> RepetitionReport {
    let per_story: Vec<StoryRepetition> = stories
        .iter()
        .map(|s| StoryRepetition {
            text_repetition: repetition_rate(s.as_ref()),
            sentence_repetition: sentence_repetition(s.as_ref()),
        })
        .collect();
    let count = per_story.len().max(1) as f64;
    RepetitionReport {
        stories: per_story.len(),
        text_repetition: per_story.iter().map(|r| r.text_repetition).sum::<f64>() / count,
        sentence_repetition: per_story.iter().map(|r| r.sentence_repetition as f64).sum::<f64>() / count,
        per_story,
    }
}
