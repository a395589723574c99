use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{
    synthesize, write_story_records, Corpus, CorpusEntry, SequenceFeatures, Split, Story, StoryRecord, StoryStyle,
    ToyLanguage, Vocabulary, FIXED_WORDS,
};
use crate::error::{Error, Result};

/// Recipe for a synthetic corpus. Stories are laid out train first, then
/// validation, then test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToySpec {
    pub seed: u64,
    pub train_stories: usize,
    pub val_stories: usize,
    pub test_stories: usize,
    pub n: usize,
    pub k: usize,
    pub dim: usize,
    /// Requested number of non-reserved words; themes fill what the fixed
    /// words leave over, with at least one theme.
    pub vocab_size: usize,
    pub style: StoryStyle,
}

impl ToySpec {
    pub fn theme_count(&self) -> usize {
        self.vocab_size.saturating_sub(FIXED_WORDS).max(1)
    }

    pub fn language(&self) -> ToyLanguage {
        ToyLanguage::new(self.theme_count())
    }

    fn story_seed(&self, index: usize) -> u64 {
        self.seed ^ (index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
    }

    /// Records paired with their features, before any file is written.
    pub fn generate(&self) -> Result<ToyCorpus> {
        if self.train_stories + self.val_stories + self.test_stories == 0 {
            return Err(Error::InvalidArgument("a toy corpus needs at least one story".into()));
        }
        let language = self.language();
        let total = self.train_stories + self.val_stories + self.test_stories;
        let mut records = Vec::with_capacity(total);
        let mut features = Vec::with_capacity(total);
        let mut themes = Vec::with_capacity(total);
        for index in 0..total {
            let seq = synthesize(self.story_seed(index), self.n, self.k, self.dim, self.theme_count(), self.style)?;
            let split = if index < self.train_stories {
                Split::Train
            } else if index < self.train_stories + self.val_stories {
                Split::Val
            } else {
                Split::Test
            };
            let story_id = format!("toy{index:04}");
            records.push(StoryRecord {
                image_ids: (0..self.n).map(|i| format!("{story_id}-{i}")).collect(),
                features: Some(format!("features/{story_id}.feat")),
                story_id: Some(story_id),
                sentences: seq.sentences,
                split,
            });
            features.push(seq.features);
            themes.push(seq.themes);
        }
        Ok(ToyCorpus {
            vocab: language.vocabulary(),
            records,
            features,
            themes,
        })
    }

    pub fn build(&self) -> Result<(Corpus, Vocabulary)> {
        let toy = self.generate()?;
        Ok((toy.corpus()?, toy.vocab))
    }
}

#[derive(Debug, Clone)]
pub struct ToyCorpus {
    pub vocab: Vocabulary,
    pub records: Vec<StoryRecord>,
    pub features: Vec<SequenceFeatures>,
    /// Theme index of every image.
    pub themes: Vec<Vec<usize>>,
}

impl ToyCorpus {
    pub fn corpus(&self) -> Result<Corpus> {
        let mut corpus = Corpus::new();
        for (rec, feats) in self.records.iter().zip(&self.features) {
            let sentences = rec.sentences.iter().map(|s| self.vocab.encode_sentence(s)).collect();
            corpus.push(CorpusEntry {
                story_id: rec.story_id.clone().unwrap_or_default(),
                features: Arc::new(feats.clone()),
                story: Story::new(rec.image_ids.clone(), sentences)?,
                split: rec.split,
            })?;
        }
        Ok(corpus)
    }

    /// Writes `corpus.jsonl`, `vocab.txt` and one feature file per story.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let feature_dir = dir.join("features");
        std::fs::create_dir_all(&feature_dir).map_err(|e| Error::io(&feature_dir, e))?;
        for (rec, feats) in self.records.iter().zip(&self.features) {
            let rel = rec.features.as_deref().expect("toy records name their features");
            feats.save(&dir.join(rel))?;
        }
        write_story_records(&dir.join("corpus.jsonl"), &self.records)?;
        self.vocab.save(&dir.join("vocab.txt"))
    }
}

/// Standard-style corpus with every story in the training split.
pub fn make_toy_corpus(
    seed: u64,
    num_stories: usize,
    n: usize,
    k: usize,
    dim: usize,
    vocab_size: usize,
) -> Result<(Corpus, Vocabulary)> {
    ToySpec {
        seed,
        train_stories: num_stories,
        val_stories: 0,
        test_stories: 0,
        n,
        k,
        dim,
        vocab_size,
        style: StoryStyle::Standard,
    }
    .build()
}
