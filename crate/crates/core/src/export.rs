//! Plot-ready records for attention maps, calibration scalars, generated
//! stories and repetition reports. Every stream is written as JSON lines.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Vocabulary, EOS};
use crate::error::{Error, Result};
use crate::metrics::RepetitionReport;
use crate::model::{GeneratedStory, ModelParams};

/// OIA beliefs over the `K` regions of image `i` while generating sentence `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OiaMapRecord {
    pub story_id: String,
    pub s: usize,
    pub i: usize,
    pub beliefs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsaWeightRecord {
    pub story_id: String,
    pub s: usize,
    pub image_weights: Vec<f64>,
}

/// One calibration scalar. `i` is absent for the per-sentence ISA scalars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub factor: String,
    pub s: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub i: Option<usize>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub story_id: String,
    pub sentences: Vec<String>,
    /// File holding this story's OIA map records.
    pub attention_maps: String,
    /// File holding this story's ISA weight records.
    pub isa_weights: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub betas: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionRecord {
    pub config: String,
    pub text_rep: f64,
    pub sent_rep: f64,
    pub stories: usize,
}

impl RepetitionRecord {
    pub fn new(config: impl Into<String>, report: &RepetitionReport) -> Self {
        RepetitionRecord {
            config: config.into(),
            text_rep: report.text_repetition,
            sent_rep: report.sentence_repetition,
            stories: report.stories,
        }
    }
}

/// `N * N` OIA map records in `(s, i)` order.
pub fn oia_records(story_id: &str, generated: &GeneratedStory) -> Vec<OiaMapRecord> {
    let maps = &generated.maps.0;
    let (n, m, _) = maps.dim();
    let mut out = Vec::with_capacity(n * m);
    for s in 0..n {
        for i in 0..m {
            out.push(OiaMapRecord {
                story_id: story_id.to_string(),
                s,
                i,
                beliefs: maps.slice(ndarray::s![s, i, ..]).to_vec(),
            });
        }
    }
    out
}

pub fn isa_records(story_id: &str, generated: &GeneratedStory) -> Vec<IsaWeightRecord> {
    generated
        .isa_weights
        .rows()
        .into_iter()
        .enumerate()
        .map(|(s, w)| IsaWeightRecord {
            story_id: story_id.to_string(),
            s,
            image_weights: w.to_vec(),
        })
        .collect()
}

/// All trained calibration scalars. Unused diagonal entries of the pairwise
/// OIA scalars are skipped.
pub fn calibration_records(params: &ModelParams) -> Vec<CalibrationRecord> {
    let mut out = Vec::new();
    let calib = &params.calib;
    let n = calib.n();
    let grids = [
        ("oia.local", &calib.local, false),
        ("oia.self", &calib.self_, false),
        ("oia.current_pair", &calib.current_pair, true),
        ("oia.neighbor_pair", &calib.neighbor_pair, true),
    ];
    for (factor, grid, skip_diagonal) in grids {
        for s in 0..n {
            for i in 0..n {
                if skip_diagonal && i == s {
                    continue;
                }
                out.push(CalibrationRecord {
                    factor: factor.to_string(),
                    s,
                    i: Some(i),
                    value: grid[[s, i]],
                });
            }
        }
    }
    for (factor, values) in [("isa.local", &params.isa.alpha_local), ("isa.self", &params.isa.alpha_self)] {
        for (s, &value) in values.iter().enumerate() {
            out.push(CalibrationRecord {
                factor: factor.to_string(),
                s,
                i: None,
                value,
            });
        }
    }
    out
}

/// Decoded sentence text without the trailing EOS.
pub fn sentence_text(tokens: &[usize], vocab: &Vocabulary) -> String {
    let body: Vec<usize> = tokens.iter().copied().filter(|&t| t != EOS).collect();
    vocab.decode(&body).join(" ")
}

pub fn generation_record(
    story_id: &str,
    generated: &GeneratedStory,
    vocab: &Vocabulary,
    maps_file: &str,
    isa_file: &str,
    with_betas: bool,
) -> GenerationRecord {
    GenerationRecord {
        story_id: story_id.to_string(),
        sentences: generated.sentences.iter().map(|s| sentence_text(s, vocab)).collect(),
        attention_maps: maps_file.to_string(),
        isa_weights: isa_file.to_string(),
        betas: with_betas.then(|| generated.betas.clone()),
    }
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    std::fs::write(path, to_jsonl(records)?).map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Ablations, ModelDims};
    use crate::training::ToySpec;
    use crate::{generate_story, DecodeSettings, StoryFrequencyTable, StoryStyle};
    use rand::SeedableRng;

    #[test]
    fn five_images_give_twenty_five_maps_and_five_weight_vectors() {
        let spec = ToySpec {
            seed: 3,
            train_stories: 1,
            val_stories: 0,
            test_stories: 0,
            n: 5,
            k: 4,
            dim: 6,
            vocab_size: 20,
            style: StoryStyle::Standard,
        };
        let (corpus, vocab) = spec.build().unwrap();
        let dims = ModelDims { n: 5, d: 6, vocab: vocab.len(), embed: 6, gamma: 4, box_input: None };
        let params = ModelParams::random(dims, false, &mut rand_chacha::ChaCha8Rng::seed_from_u64(1));
        let entry = &corpus.entries()[0];
        let table = StoryFrequencyTable::uniform(vocab.len());
        let settings = DecodeSettings { max_len: 4, ..Default::default() };
        let g = generate_story(&params, &entry.features, &table, &settings, &Ablations::default()).unwrap();
        let maps = oia_records("x", &g);
        let isa = isa_records("x", &g);
        assert_eq!(maps.len(), 25);
        assert_eq!(isa.len(), 5);
        assert!(maps.iter().all(|r| r.beliefs.len() == 4));
        assert!(isa.iter().all(|r| r.image_weights.len() == 5));
        // 4 grids with 5 + 5 + 4 + 4 scalars per sentence, plus 2 ISA scalars.
        assert_eq!(calibration_records(&params).len(), 5 * 18 + 10);
    }

    #[test]
    fn jsonl_round_trip() {
        let records = vec![
            RepetitionRecord { config: "full".into(), text_rep: 0.25, sent_rep: 0.0, stories: 3 },
            RepetitionRecord { config: "no-prior".into(), text_rep: 0.1 + 0.2, sent_rep: 1.5, stories: 3 },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rep.jsonl");
        write_jsonl(&path, &records).unwrap();
        let back: Vec<RepetitionRecord> = read_jsonl(&path).unwrap();
        assert_eq!(back, records);
    }
}
