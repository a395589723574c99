//! Bag-of-words histograms and per-word story frequencies.
//!
//! Training and inference advance histograms with the same
//! [`BowHistogram::update`]; only the token source differs (ground truth vs
//! predictions).

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::data::{Story, Vocabulary, UNK};
use crate::error::{Error, Result};

/// Counts of every countable token used so far.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BowHistogram {
    counts: Vec<u32>,
    total: u64,
}

impl BowHistogram {
    pub fn new(vocab_size: usize) -> Self {
        BowHistogram {
            counts: vec![0; vocab_size],
            total: 0,
        }
    }

    /// Counts all tokens of the previous sentences (BOS/EOS/PAD excluded).
    pub fn from_sentences<S: AsRef<[usize]>>(vocab_size: usize, previous: &[S]) -> Self {
        let mut h = Self::new(vocab_size);
        for sentence in previous {
            for &t in sentence.as_ref() {
                h.update(t);
            }
        }
        h
    }

    /// Adds one occurrence of `token`; reserved structural tokens are ignored.
    pub fn update(&mut self, token: usize) {
        if Vocabulary::is_countable(token) && token < self.counts.len() {
            self.counts[token] += 1;
            self.total += 1;
        }
    }

    pub fn with(mut self, token: usize) -> Self {
        self.update(token);
        self
    }

    pub fn count(&self, token: usize) -> u32 {
        self.counts.get(token).copied().unwrap_or(0)
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// `(token, count)` for nonzero entries.
    pub fn nonzero(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(t, &c)| (t, c as f64))
    }
}

/// `init_histogram`: counts of every token in `previous`.
pub fn init_histogram<S: AsRef<[usize]>>(vocab_size: usize, previous: &[S]) -> BowHistogram {
    BowHistogram::from_sentences(vocab_size, previous)
}

/// Average number of uses of each word per story that uses it.
#[derive(Debug, Clone, PartialEq)]
pub struct StoryFrequencyTable {
    values: Vec<f64>,
}

pub const DEFAULT_STORY_FREQUENCY: f64 = 1.0;

impl StoryFrequencyTable {
    pub fn uniform(vocab_size: usize) -> Self {
        StoryFrequencyTable {
            values: vec![DEFAULT_STORY_FREQUENCY; vocab_size],
        }
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        StoryFrequencyTable { values }
    }

    /// `rho(w) = appearances of w / stories using w`; words never seen, and
    /// `UNK`, get the default 1.
    pub fn from_stories<'a, I>(vocab_size: usize, stories: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Story>,
    {
        let mut appearances = vec![0u64; vocab_size];
        let mut stories_using = vec![0u64; vocab_size];
        let mut any = false;
        for story in stories {
            any = true;
            let h = BowHistogram::from_sentences(vocab_size, story.sentences());
            for (t, c) in h.nonzero() {
                appearances[t] += c as u64;
                stories_using[t] += 1;
            }
        }
        if !any {
            return Err(Error::EmptyCorpus);
        }
        let values = (0..vocab_size)
            .map(|t| {
                if t == UNK || stories_using[t] == 0 {
                    DEFAULT_STORY_FREQUENCY
                } else {
                    appearances[t] as f64 / stories_using[t] as f64
                }
            })
            .collect();
        Ok(StoryFrequencyTable { values })
    }

    pub fn get(&self, token: usize) -> f64 {
        self.values.get(token).copied().unwrap_or(DEFAULT_STORY_FREQUENCY)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `token<TAB>value` per non-reserved vocabulary entry, in id order.
    pub fn to_file_string(&self, vocab: &Vocabulary) -> String {
        let mut out = String::new();
        for (id, tok) in vocab.tokens().iter().enumerate().skip(crate::data::vocab::RESERVED.len()) {
            let _ = writeln!(out, "{tok}\t{}", self.get(id));
        }
        out
    }

    pub fn from_file_string(text: &str, vocab: &Vocabulary) -> Result<Self> {
        let mut by_token = HashMap::new();
        for (line_no, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let (tok, value) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse("frequency table", format!("line {}: expected token<TAB>value", line_no + 1)))?;
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::parse("frequency table", format!("line {}: bad value", line_no + 1)))?;
            if !value.is_finite() || value < 0.0 {
                return Err(Error::parse("frequency table", format!("line {}: value must be >= 0", line_no + 1)));
            }
            by_token.insert(tok.to_string(), value);
        }
        let values = vocab
            .tokens()
            .iter()
            .map(|t| by_token.get(t).copied().unwrap_or(DEFAULT_STORY_FREQUENCY))
            .collect();
        Ok(StoryFrequencyTable { values })
    }

    pub fn save(&self, path: &Path, vocab: &Vocabulary) -> Result<()> {
        std::fs::write(path, self.to_file_string(vocab)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, vocab: &Vocabulary) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_file_string(&text, vocab)
    }
}

/// `max(0, phi(w) - rho(w) + 1)`
pub fn effective_count(histogram: &BowHistogram, table: &StoryFrequencyTable, token: usize) -> f64 {
    (histogram.count(token) as f64 - table.get(token) + 1.0).max(0.0)
}

/// Effective counts for the whole vocabulary.
pub fn effective_counts(histogram: &BowHistogram, table: &StoryFrequencyTable) -> Vec<f64> {
    (0..histogram.len()).map(|t| effective_count(histogram, table, t)).collect()
}
