//! Loader for pretrained word vectors in the common text layout: one word per
//! line followed by its vector components, separated by whitespace.

use std::path::Path;

use crate::data::Vocabulary;
use crate::decoder::DecoderParams;
use crate::error::{Error, Result};

/// Copies the vectors of words present in `vocab` into the embedding table
/// and returns how many rows were replaced. Unknown words are skipped.
pub fn apply_pretrained_embeddings(text: &str, vocab: &Vocabulary, decoder: &mut DecoderParams) -> Result<usize> {
    let dim = decoder.embed_dim();
    let mut replaced = 0;
    for (line_no, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let values: Vec<f64> = parts
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse("embedding file", format!("line {}: {e}", line_no + 1)))?;
        if values.len() != dim {
            return Err(Error::Shape(format!(
                "line {}: vector of length {} for embedding dimension {dim}",
                line_no + 1,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: i });
        }
        if !vocab.contains(word) {
            continue;
        }
        let id = vocab.id(word);
        for (c, v) in values.into_iter().enumerate() {
            decoder.embedding[[id, c]] = v;
        }
        replaced += 1;
    }
    Ok(replaced)
}

pub fn load_pretrained_embeddings(path: &Path, vocab: &Vocabulary, decoder: &mut DecoderParams) -> Result<usize> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    apply_pretrained_embeddings(&text, vocab, decoder)
}
