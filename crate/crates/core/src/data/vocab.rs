use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

/// Lowercases and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(|t| t.to_lowercase()).collect()
}

/// Dense token ids with a fixed reserved block `PAD, UNK, BOS, EOS` at `0..4`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from tokenized stories (story → sentence → token).
    ///
    /// Tokens seen fewer than `min_count` times are left out and later map to
    /// `UNK`. Ids are assigned by descending count, ties broken lexicographically.
    pub fn build<S, T>(stories: &[S], min_count: usize) -> Result<Self>
    where
        S: AsRef<[T]>,
        T: AsRef<[String]>,
    {
        if min_count == 0 {
            return Err(Error::InvalidArgument("min_count must be at least 1".into()));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut any = false;
        for story in stories {
            for sentence in story.as_ref() {
                for token in sentence.as_ref() {
                    any = true;
                    *counts.entry(token.as_str()).or_default() += 1;
                }
            }
        }
        if !any {
            return Err(Error::EmptyCorpus);
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(tok, c)| *c >= min_count && !RESERVED.contains(tok))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Ok(Self::from_tokens(kept.into_iter().map(|(t, _)| t.to_string())))
    }

    /// Vocabulary whose non-reserved tokens take ids `4..` in iteration order.
    /// Duplicates and reserved names are skipped.
    pub fn from_tokens<I: IntoIterator<Item = String>>(tokens: I) -> Self {
        let mut vocab = Vocabulary {
            tokens: RESERVED.iter().map(|s| s.to_string()).collect(),
            index: HashMap::new(),
        };
        for (id, tok) in RESERVED.iter().enumerate() {
            vocab.index.insert(tok.to_string(), id);
        }
        for tok in tokens {
            if !vocab.index.contains_key(&tok) {
                vocab.index.insert(tok.clone(), vocab.tokens.len());
                vocab.tokens.push(tok);
            }
        }
        vocab
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of `token`, or `UNK`.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Token ids that enter bag-of-words histograms (everything but PAD/BOS/EOS).
    pub fn is_countable(id: usize) -> bool {
        !matches!(id, PAD | BOS | EOS)
    }

    /// Encodes a tokenized sentence and appends `EOS`.
    pub fn encode_sentence(&self, tokens: &[String]) -> Vec<usize> {
        let mut ids: Vec<usize> = tokens.iter().map(|t| self.id(t)).collect();
        ids.push(EOS);
        ids
    }

    /// Decodes ids, dropping BOS/EOS/PAD.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter(|&&id| Self::is_countable(id))
            .map(|&id| self.token(id).unwrap_or(RESERVED[UNK]).to_string())
            .collect()
    }

    /// Serialized form: one non-reserved token per line, line `i` holds id `4 + i`.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for tok in &self.tokens[RESERVED.len()..] {
            let _ = writeln!(out, "{tok}");
        }
        out
    }

    pub fn from_file_string(text: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            let tok = line.trim_end_matches('\r');
            if tok.is_empty() || tok.contains(char::is_whitespace) {
                return Err(Error::parse(
                    "vocabulary",
                    format!("line {}: token must be non-empty without whitespace", line_no + 1),
                ));
            }
            tokens.push(tok.to_string());
        }
        let vocab = Self::from_tokens(tokens.iter().cloned());
        if vocab.len() != tokens.len() + RESERVED.len() {
            return Err(Error::parse("vocabulary", "duplicate or reserved token"));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_file_string(&text)
    }

    /// SHA-256 of the serialized vocabulary, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_file_string().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn story(text: &[&str]) -> Vec<Vec<String>> {
        text.iter().map(|s| tokenize(s)).collect()
    }

    #[test]
    fn min_count_threshold_maps_rare_tokens_to_unk() {
        let stories = vec![story(&["dog cat dog", "cat dog bird"])];
        let vocab = Vocabulary::build(&stories, 3).unwrap();
        assert!(vocab.contains("dog"));
        assert_eq!(vocab.id("cat"), UNK);
        assert_eq!(vocab.id("bird"), UNK);
        assert_eq!(vocab.len(), RESERVED.len() + 1);
    }

    #[test]
    fn min_count_one_keeps_every_token() {
        let stories = vec![story(&["b a c", "a"])];
        let vocab = Vocabulary::build(&stories, 1).unwrap();
        assert_eq!(vocab.len(), 7);
        // a (2) first, then b, c lexicographically.
        assert_eq!(vocab.id("a"), 4);
        assert_eq!(vocab.id("b"), 5);
        assert_eq!(vocab.id("c"), 6);
    }

    #[test]
    fn empty_corpus_and_zero_min_count_are_errors() {
        let empty: Vec<Vec<Vec<String>>> = vec![];
        assert!(matches!(Vocabulary::build(&empty, 1), Err(Error::EmptyCorpus)));
        let stories = vec![story(&["a"])];
        assert!(Vocabulary::build(&stories, 0).is_err());
    }

    #[test]
    fn reserved_tokens_are_always_present() {
        let vocab = Vocabulary::build(&[story(&["x"])], 5).unwrap();
        for (id, tok) in RESERVED.iter().enumerate() {
            assert_eq!(vocab.id(tok), id);
        }
    }

    #[test]
    fn file_round_trip_and_hash() {
        let vocab = Vocabulary::build(&[story(&["the dog the cat"])], 1).unwrap();
        let text = vocab.to_file_string();
        assert_eq!(text, "the\ncat\ndog\n");
        let back = Vocabulary::from_file_string(&text).unwrap();
        assert_eq!(back, vocab);
        assert_eq!(back.hash(), vocab.hash());
        assert!(Vocabulary::from_file_string("a\na\n").is_err());
    }

    #[test]
    fn encode_appends_eos_and_decode_strips_it() {
        let vocab = Vocabulary::from_tokens(["a".to_string(), "b".to_string()]);
        let ids = vocab.encode_sentence(&tokenize("a b zzz"));
        assert_eq!(ids, vec![4, 5, UNK, EOS]);
        assert_eq!(vocab.decode(&ids), vec!["a", "b", "<unk>"]);
    }
}
