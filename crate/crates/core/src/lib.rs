//! Visual storytelling with ordered image attention, image-sentence
//! attention, and a repetition-aware decoder.

pub mod data;
pub mod decoder;
pub mod error;
pub mod export;
pub mod history;
pub mod isa;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod oia;
pub mod training;

pub use data::*;
pub use decoder::{beam_search, BeamResult, DecodeSettings, DecoderOptions, DecoderParams};
pub use error::{Error, Result};
pub use history::{BowHistogram, StoryFrequencyTable};
pub use isa::IsaParams;
pub use metrics::{corpus_report, repetition_rate, sentence_repetition, RepetitionReport};
pub use model::{generate_story, story_loss, story_loss_and_grad, Ablation, Ablations, GeneratedStory, ModelDims, ModelParams};
pub use oia::{AttendedImages, AttentionCalibration, AttentionMaps, FactorWeights};
pub use training::{make_toy_corpus, train, Checkpoint, TrainConfig};
