//! Deterministic synthetic image sequences and stories.
//!
//! Every image gets a theme. Its regions are noisy copies of fixed prototype
//! vectors laid out by slot: slot 0 carries the theme's primary prototype,
//! slot 1 a secondary prototype of the same theme, and remaining slots a
//! shared background prototype. Noise is uniform in `[-NOISE, NOISE]` per
//! coordinate. The first sentence of a standard story names the theme of the
//! last image, so decoding it requires looking across images.

use ndarray::{Array1, Array3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::features::SequenceFeatures;
use super::story::Story;
use super::vocab::Vocabulary;
use crate::error::{Error, Result};

pub const NOISE: f64 = 0.05;
/// Longest synthetic sentence, excluding EOS.
pub const MAX_SENTENCE_TOKENS: usize = 7;

const PROTOTYPE_SEED: u64 = 0x0ddb_a11_5eed;

const THEME_WORDS: &[&str] = &[
    "beach", "party", "park", "city", "snow", "parade", "wedding", "concert", "garden", "museum",
    "farm", "lake", "forest", "market", "zoo", "castle", "harbor", "desert", "island", "bridge",
    "church", "festival", "stadium", "river", "mountain", "village", "airport", "library",
    "school", "temple",
];
const ADJECTIVES: &[&str] = &["sunny", "busy", "quiet", "great"];
const FILLERS: &[&str] = &[
    "a", "story", "about", "the", "was", "we", "went", "to", "stayed", "at", "left", "then",
];
const MARKER: &str = "then";

/// Number of non-theme words in the synthetic language.
pub const FIXED_WORDS: usize = ADJECTIVES.len() + FILLERS.len();

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StoryStyle {
    /// Sentence 1 names the last image's theme and its own; later sentences
    /// name their image's theme.
    #[default]
    Standard,
    /// Two themes per story. The phrasing of a sentence depends on how often
    /// its theme already occurred earlier in the story. Every sentence carries
    /// an adjective drawn independently of the images, and all sentences but
    /// one randomly placed sentence start with a marker word.
    Repetitive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyLanguage {
    theme_count: usize,
}

impl ToyLanguage {
    pub fn new(theme_count: usize) -> Self {
        ToyLanguage {
            theme_count: theme_count.max(1),
        }
    }

    pub fn theme_count(&self) -> usize {
        self.theme_count
    }

    pub fn theme_word(&self, theme: usize) -> String {
        THEME_WORDS
            .get(theme)
            .map(|w| w.to_string())
            .unwrap_or_else(|| format!("theme{theme}"))
    }

    /// All words in a fixed order: fillers, adjectives, themes.
    pub fn words(&self) -> Vec<String> {
        FILLERS
            .iter()
            .chain(ADJECTIVES)
            .map(|w| w.to_string())
            .chain((0..self.theme_count).map(|t| self.theme_word(t)))
            .collect()
    }

    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary::from_tokens(self.words())
    }

    /// Sentences for images with the given themes and per-sentence choices.
    pub fn sentences(&self, themes: &[usize], choices: &SentenceChoices, style: StoryStyle) -> Vec<Vec<String>> {
        let w = |s: &str| s.to_string();
        let adj = |s: usize| w(ADJECTIVES[choices.adjectives[s] % ADJECTIVES.len()]);
        let last = *themes.last().expect("at least one image");
        match style {
            StoryStyle::Standard => themes
                .iter()
                .enumerate()
                .map(|(s, &t)| {
                    if s == 0 {
                        vec![w("a"), self.theme_word(last), w("story"), w("about"), w("the"), self.theme_word(t)]
                    } else {
                        vec![w("the"), self.theme_word(t), w("was"), adj(s)]
                    }
                })
                .collect(),
            StoryStyle::Repetitive => themes
                .iter()
                .enumerate()
                .map(|(s, &t)| {
                    let seen = themes[..s].iter().filter(|&&p| p == t).count();
                    let theme = self.theme_word(t);
                    let mut sentence = match seen {
                        0 => vec![w("we"), w("went"), w("to"), w("the"), adj(s), theme],
                        1 => vec![w("the"), theme, w("was"), adj(s)],
                        2 => vec![w("we"), w("stayed"), w("at"), w("the"), adj(s), theme],
                        _ => vec![w("we"), w("left"), w("the"), adj(s), theme],
                    };
                    if choices.unmarked != Some(s) {
                        sentence.insert(0, w(MARKER));
                    }
                    sentence
                })
                .collect(),
        }
    }
}

/// Random choices that shape a repetitive story's wording without being
/// visible in its images.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceChoices {
    /// Adjective index per sentence.
    pub adjectives: Vec<usize>,
    /// The one sentence without the leading marker word; every other
    /// sentence of a repetitive story starts with it.
    pub unmarked: Option<usize>,
}

impl SentenceChoices {
    /// Standard-style choices: the adjective follows the theme.
    pub fn standard(themes: &[usize]) -> Self {
        SentenceChoices {
            adjectives: themes.iter().map(|&t| t % ADJECTIVES.len()).collect(),
            unmarked: None,
        }
    }

    pub fn draw<R: Rng>(rng: &mut R, n: usize) -> Self {
        SentenceChoices {
            adjectives: (0..n).map(|_| rng.gen_range(0..ADJECTIVES.len())).collect(),
            unmarked: Some(rng.gen_range(0..n)),
        }
    }
}

/// Fixed prototype vectors; independent of any sequence seed.
#[derive(Debug, Clone)]
pub struct Prototypes {
    pub primary: Vec<Array1<f64>>,
    pub secondary: Vec<Array1<f64>>,
    pub background: Array1<f64>,
}

impl Prototypes {
    pub fn new(dim: usize, theme_count: usize) -> Self {
        let draw = |stream: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(PROTOTYPE_SEED);
            rng.set_stream(stream);
            Array1::from_shape_fn(dim, |_| rng.gen_range(-1.0..=1.0))
        };
        Prototypes {
            primary: (0..theme_count).map(|t| draw(2 * t as u64 + 1)).collect(),
            secondary: (0..theme_count).map(|t| draw(2 * t as u64 + 2)).collect(),
            background: draw(0),
        }
    }

    /// Prototype for region slot `slot` of an image with theme `theme`.
    pub fn slot(&self, theme: usize, slot: usize) -> &Array1<f64> {
        match slot {
            0 => &self.primary[theme],
            1 => &self.secondary[theme],
            _ => &self.background,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSequence {
    pub features: SequenceFeatures,
    pub themes: Vec<usize>,
    pub sentences: Vec<Vec<String>>,
}

fn draw_themes(rng: &mut ChaCha8Rng, n: usize, theme_count: usize, style: StoryStyle) -> Vec<usize> {
    match style {
        StoryStyle::Standard => (0..n).map(|_| rng.gen_range(0..theme_count)).collect(),
        StoryStyle::Repetitive => {
            let mut pool: Vec<usize> = (0..theme_count).collect();
            pool.shuffle(rng);
            pool.truncate(2);
            (0..n).map(|_| pool[rng.gen_range(0..pool.len())]).collect()
        }
    }
}

pub fn synthesize(
    seed: u64,
    n: usize,
    k: usize,
    dim: usize,
    theme_count: usize,
    style: StoryStyle,
) -> Result<SyntheticSequence> {
    if n == 0 || k == 0 || dim == 0 || theme_count == 0 {
        return Err(Error::InvalidArgument("synthetic sizes must be at least 1".into()));
    }
    let prototypes = Prototypes::new(dim, theme_count);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let themes = draw_themes(&mut rng, n, theme_count, style);
    let regions = Array3::from_shape_fn((n, k, dim), |(i, slot, c)| {
        prototypes.slot(themes[i], slot)[c] + rng.gen_range(-NOISE..=NOISE)
    });
    let features = SequenceFeatures::new(regions, None)?;
    let choices = match style {
        StoryStyle::Standard => SentenceChoices::standard(&themes),
        StoryStyle::Repetitive => SentenceChoices::draw(&mut rng, n),
    };
    let sentences = ToyLanguage::new(theme_count).sentences(&themes, &choices, style);
    Ok(SyntheticSequence {
        features,
        themes,
        sentences,
    })
}

/// Standard-style sequence with its story encoded against
/// [`ToyLanguage::vocabulary`] for the same `theme_count`.
pub fn generate_synthetic_sequence(
    seed: u64,
    n: usize,
    k: usize,
    dim: usize,
    theme_count: usize,
) -> Result<(SequenceFeatures, Story)> {
    let seq = synthesize(seed, n, k, dim, theme_count, StoryStyle::Standard)?;
    let vocab = ToyLanguage::new(theme_count).vocabulary();
    let story = Story::new(
        (0..n).map(|i| format!("img{i}")).collect(),
        seq.sentences.iter().map(|s| vocab.encode_sentence(s)).collect(),
    )?;
    Ok((seq.features, story))
}
