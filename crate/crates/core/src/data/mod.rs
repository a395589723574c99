//! Vocabularies, stories, region features and their file formats.

pub mod features;
pub mod story;
pub mod synthetic;
pub mod vocab;

pub use features::{fuse_box_coordinates, FeatureHeader, SequenceFeatures};
pub use story::{read_story_records, write_story_records, Corpus, CorpusEntry, Split, Story, StoryRecord};
pub use synthetic::{generate_synthetic_sequence, synthesize, StoryStyle, ToyLanguage, FIXED_WORDS};
pub use vocab::{tokenize, Vocabulary, BOS, EOS, PAD, RESERVED, UNK};
