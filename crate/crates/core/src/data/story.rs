use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::features::SequenceFeatures;
use super::vocab::{Vocabulary, EOS};
use crate::error::{Error, Result};

/// A tokenized story: one sentence per image, each terminated by `EOS`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Story {
    image_ids: Vec<String>,
    sentences: Vec<Vec<usize>>,
}

impl Story {
    pub fn new(image_ids: Vec<String>, sentences: Vec<Vec<usize>>) -> Result<Self> {
        if sentences.is_empty() {
            return Err(Error::InvalidArgument("a story needs at least one sentence".into()));
        }
        if image_ids.len() != sentences.len() {
            return Err(Error::Shape(format!(
                "{} image ids for {} sentences",
                image_ids.len(),
                sentences.len()
            )));
        }
        for (s, sentence) in sentences.iter().enumerate() {
            if sentence.len() < 2 {
                return Err(Error::InvalidArgument(format!("sentence {s} is empty")));
            }
            if sentence.last() != Some(&EOS) || sentence[..sentence.len() - 1].contains(&EOS) {
                return Err(Error::InvalidArgument(format!(
                    "sentence {s} must end with exactly one EOS"
                )));
            }
        }
        Ok(Story {
            image_ids,
            sentences,
        })
    }

    pub fn n(&self) -> usize {
        self.sentences.len()
    }

    pub fn image_ids(&self) -> &[String] {
        &self.image_ids
    }

    pub fn sentences(&self) -> &[Vec<usize>] {
        &self.sentences
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split `{other}`"))),
        }
    }
}

/// One line of a corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoryRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub story_id: Option<String>,
    pub image_ids: Vec<String>,
    pub sentences: Vec<Vec<String>>,
    /// Feature file, relative to the corpus file's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<String>,
    #[serde(default)]
    pub split: Split,
}

/// Reads a corpus file: one JSON object per non-empty line.
pub fn read_story_records(path: &Path) -> Result<Vec<StoryRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_story_records(&text)
}

pub fn parse_story_records(text: &str) -> Result<Vec<StoryRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::parse("corpus record", format!("line {}: {e}", i + 1)))
        })
        .collect()
}

pub fn write_story_records(path: &Path, records: &[StoryRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub story_id: String,
    pub features: Arc<SequenceFeatures>,
    pub story: Story,
    pub split: Split,
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    entries: Vec<CorpusEntry>,
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, entry: CorpusEntry) -> Result<()> {
        if entry.features.n() != entry.story.n() {
            return Err(Error::Shape(format!(
                "story `{}` has {} sentences but its features hold {} images",
                entry.story_id,
                entry.story.n(),
                entry.features.n()
            )));
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn entries(&self) -> &[CorpusEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &CorpusEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Loads a corpus file together with the feature files its records reference.
    pub fn load(path: &Path, vocab: &Vocabulary) -> Result<Self> {
        let records = read_story_records(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_records(&records, vocab, &base)
    }

    pub fn from_records(records: &[StoryRecord], vocab: &Vocabulary, base: &Path) -> Result<Self> {
        let mut corpus = Corpus::new();
        for (i, rec) in records.iter().enumerate() {
            let story_id = rec.story_id.clone().unwrap_or_else(|| format!("story{i}"));
            let feature_path: PathBuf = match &rec.features {
                Some(p) => base.join(p),
                None => {
                    return Err(Error::parse(
                        "corpus record",
                        format!("story `{story_id}` has no feature file"),
                    ))
                }
            };
            let features = SequenceFeatures::load(&feature_path)?;
            let sentences = rec.sentences.iter().map(|s| vocab.encode_sentence(s)).collect();
            let story = Story::new(rec.image_ids.clone(), sentences)?;
            corpus.push(CorpusEntry {
                story_id,
                features: Arc::new(features),
                story,
                split: rec.split,
            })?;
        }
        Ok(corpus)
    }
}
