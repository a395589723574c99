//! Full model: attention over the image sequence, per-sentence context
//! embeddings, and the decoder. Holds the loss with its analytic gradient and
//! story generation.

use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, Array3, ArrayView2, ArrayViewD, ArrayViewMutD};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::features::fuse_box_coordinates_backward;
use crate::data::{fuse_box_coordinates, SequenceFeatures, Story};
use crate::decoder::{beam_search, DecodeSettings, DecoderOptions, DecoderParams, Dropout, SentencePass};
use crate::error::{Error, Result};
use crate::history::{BowHistogram, StoryFrequencyTable};
use crate::isa::{IsaForward, IsaParams};
use crate::linalg::fan_in_uniform;
use crate::oia::{AttendedImages, AttentionCalibration, AttentionMaps, FactorWeights, OiaForward};

/// Component switches for ablation runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablations {
    /// Attended image = plain mean of its regions.
    pub no_oia: bool,
    /// Context = plain mean of the attended images.
    pub no_isa: bool,
    /// Backward messages share the forward projections.
    pub no_direction: bool,
    /// Decoder without the bag-of-words prior (gate fixed at 1).
    pub no_prior: bool,
    /// Decoding without the repetition penalty.
    pub no_penalty: bool,
    /// Penalize raw counts instead of counts above the story frequency.
    pub no_count_norm: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Ablation {
    NoOia,
    NoIsa,
    NoDirection,
    NoPrior,
    NoPenalty,
    NoCountNorm,
}

impl Ablation {
    pub const ALL: [Ablation; 6] = [
        Ablation::NoOia,
        Ablation::NoIsa,
        Ablation::NoDirection,
        Ablation::NoPrior,
        Ablation::NoPenalty,
        Ablation::NoCountNorm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::NoOia => "no-oia",
            Ablation::NoIsa => "no-isa",
            Ablation::NoDirection => "no-direction",
            Ablation::NoPrior => "no-prior",
            Ablation::NoPenalty => "no-penalty",
            Ablation::NoCountNorm => "no-count-norm",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown ablation `{s}`")))
    }
}

impl Ablations {
    pub fn with(mut self, a: Ablation) -> Self {
        match a {
            Ablation::NoOia => self.no_oia = true,
            Ablation::NoIsa => self.no_isa = true,
            Ablation::NoDirection => self.no_direction = true,
            Ablation::NoPrior => self.no_prior = true,
            Ablation::NoPenalty => self.no_penalty = true,
            Ablation::NoCountNorm => self.no_count_norm = true,
        }
        self
    }

    pub fn active(&self) -> Vec<Ablation> {
        Ablation::ALL
            .into_iter()
            .filter(|a| match a {
                Ablation::NoOia => self.no_oia,
                Ablation::NoIsa => self.no_isa,
                Ablation::NoDirection => self.no_direction,
                Ablation::NoPrior => self.no_prior,
                Ablation::NoPenalty => self.no_penalty,
                Ablation::NoCountNorm => self.no_count_norm,
            })
            .collect()
    }

    pub fn decoder_options(&self) -> DecoderOptions {
        DecoderOptions {
            use_prior: !self.no_prior,
            fixed_gate: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Images (and sentences) per story.
    pub n: usize,
    /// Region / hidden dimension.
    pub d: usize,
    pub vocab: usize,
    pub embed: usize,
    /// Prior bottleneck width.
    pub gamma: usize,
    /// Raw region dimension when box coordinates are fused in.
    #[serde(default)]
    pub box_input: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub oia: FactorWeights,
    pub calib: AttentionCalibration,
    pub isa: IsaParams,
    pub decoder: DecoderParams,
    /// `d × (raw + 4)`
    pub box_projection: Option<Array2<f64>>,
}

impl ModelParams {
    pub fn random<R: Rng>(dims: ModelDims, tied: bool, rng: &mut R) -> Self {
        ModelParams {
            dims,
            oia: FactorWeights::random(dims.d, tied, rng),
            calib: AttentionCalibration::filled(dims.n, 1.0),
            isa: IsaParams::random(dims.n, dims.d, rng),
            decoder: DecoderParams::random(dims.vocab, dims.embed, dims.d, dims.gamma, rng),
            box_projection: dims.box_input.map(|raw| fan_in_uniform(rng, dims.d, raw + 4)),
        }
    }

    pub fn zeros(dims: ModelDims) -> Self {
        ModelParams {
            dims,
            oia: FactorWeights::zeros(dims.d),
            calib: AttentionCalibration::zeros(dims.n),
            isa: IsaParams::zeros(dims.n, dims.d),
            decoder: DecoderParams::zeros(dims.vocab, dims.embed, dims.d, dims.gamma),
            box_projection: dims.box_input.map(|raw| Array2::zeros((dims.d, raw + 4))),
        }
    }

    /// Same shapes, all zeros; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut z = Self::zeros(self.dims);
        z.oia.tied = self.oia.tied;
        z
    }

    pub fn tensors(&self) -> Vec<(&'static str, ArrayViewD<'_, f64>)> {
        let ModelParams {
            oia,
            calib,
            isa,
            decoder,
            box_projection,
            ..
        } = self;
        let mut v = vec![
            ("oia.fwd_left", oia.fwd_left.view().into_dyn()),
            ("oia.fwd_right", oia.fwd_right.view().into_dyn()),
            ("oia.bwd_left", oia.bwd_left.view().into_dyn()),
            ("oia.bwd_right", oia.bwd_right.view().into_dyn()),
            ("oia.self_left", oia.self_left.view().into_dyn()),
            ("oia.self_right", oia.self_right.view().into_dyn()),
            ("oia.local_proj", oia.local_proj.view().into_dyn()),
            ("oia.local_weights", oia.local_weights.view().into_dyn()),
            ("calib.local", calib.local.view().into_dyn()),
            ("calib.self", calib.self_.view().into_dyn()),
            ("calib.current_pair", calib.current_pair.view().into_dyn()),
            ("calib.neighbor_pair", calib.neighbor_pair.view().into_dyn()),
            ("isa.self_left", isa.self_left.view().into_dyn()),
            ("isa.self_right", isa.self_right.view().into_dyn()),
            ("isa.local_proj", isa.local_proj.view().into_dyn()),
            ("isa.local_weights", isa.local_weights.view().into_dyn()),
            ("isa.alpha_local", isa.alpha_local.view().into_dyn()),
            ("isa.alpha_self", isa.alpha_self.view().into_dyn()),
            ("decoder.embedding", decoder.embedding.view().into_dyn()),
            ("decoder.gru.w_input", decoder.gru.w_input.view().into_dyn()),
            ("decoder.gru.w_hidden", decoder.gru.w_hidden.view().into_dyn()),
            ("decoder.gru.b_input", decoder.gru.b_input.view().into_dyn()),
            ("decoder.gru.b_hidden", decoder.gru.b_hidden.view().into_dyn()),
            ("decoder.output", decoder.output.view().into_dyn()),
            ("decoder.prior_in", decoder.prior_in.view().into_dyn()),
            ("decoder.prior_out", decoder.prior_out.view().into_dyn()),
            ("decoder.gate_hidden", decoder.gate_hidden.view().into_dyn()),
            ("decoder.gate_prior", decoder.gate_prior.view().into_dyn()),
            ("decoder.gate_weights", decoder.gate_weights.view().into_dyn()),
        ];
        if let Some(p) = box_projection {
            v.push(("box_projection", p.view().into_dyn()));
        }
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, ArrayViewMutD<'_, f64>)> {
        let ModelParams {
            oia,
            calib,
            isa,
            decoder,
            box_projection,
            ..
        } = self;
        let mut v = vec![
            ("oia.fwd_left", oia.fwd_left.view_mut().into_dyn()),
            ("oia.fwd_right", oia.fwd_right.view_mut().into_dyn()),
            ("oia.bwd_left", oia.bwd_left.view_mut().into_dyn()),
            ("oia.bwd_right", oia.bwd_right.view_mut().into_dyn()),
            ("oia.self_left", oia.self_left.view_mut().into_dyn()),
            ("oia.self_right", oia.self_right.view_mut().into_dyn()),
            ("oia.local_proj", oia.local_proj.view_mut().into_dyn()),
            ("oia.local_weights", oia.local_weights.view_mut().into_dyn()),
            ("calib.local", calib.local.view_mut().into_dyn()),
            ("calib.self", calib.self_.view_mut().into_dyn()),
            ("calib.current_pair", calib.current_pair.view_mut().into_dyn()),
            ("calib.neighbor_pair", calib.neighbor_pair.view_mut().into_dyn()),
            ("isa.self_left", isa.self_left.view_mut().into_dyn()),
            ("isa.self_right", isa.self_right.view_mut().into_dyn()),
            ("isa.local_proj", isa.local_proj.view_mut().into_dyn()),
            ("isa.local_weights", isa.local_weights.view_mut().into_dyn()),
            ("isa.alpha_local", isa.alpha_local.view_mut().into_dyn()),
            ("isa.alpha_self", isa.alpha_self.view_mut().into_dyn()),
            ("decoder.embedding", decoder.embedding.view_mut().into_dyn()),
            ("decoder.gru.w_input", decoder.gru.w_input.view_mut().into_dyn()),
            ("decoder.gru.w_hidden", decoder.gru.w_hidden.view_mut().into_dyn()),
            ("decoder.gru.b_input", decoder.gru.b_input.view_mut().into_dyn()),
            ("decoder.gru.b_hidden", decoder.gru.b_hidden.view_mut().into_dyn()),
            ("decoder.output", decoder.output.view_mut().into_dyn()),
            ("decoder.prior_in", decoder.prior_in.view_mut().into_dyn()),
            ("decoder.prior_out", decoder.prior_out.view_mut().into_dyn()),
            ("decoder.gate_hidden", decoder.gate_hidden.view_mut().into_dyn()),
            ("decoder.gate_prior", decoder.gate_prior.view_mut().into_dyn()),
            ("decoder.gate_weights", decoder.gate_weights.view_mut().into_dyn()),
        ];
        if let Some(p) = box_projection {
            v.push(("box_projection", p.view_mut().into_dyn()));
        }
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn scaled_add(&mut self, scale: f64, other: &ModelParams) {
        let others = other.tensors();
        for ((_, mut a), (_, b)) in self.tensors_mut().into_iter().zip(others) {
            a.scaled_add(scale, &b);
        }
    }

    /// Restores invariants after an in-place update: unused calibration
    /// diagonals stay zero and tied projections stay copies.
    pub fn normalize_structure(&mut self) {
        self.calib.clear_unused();
        if self.oia.tied {
            self.oia.tie();
        }
    }

    /// Applies box fusion when the model owns a projection.
    pub fn prepare_features<'a>(&self, features: &'a SequenceFeatures) -> Result<Cow<'a, SequenceFeatures>> {
        match &self.box_projection {
            Some(p) => {
                if features.boxes().is_none() {
                    return Err(Error::InvalidArgument("model fuses box coordinates but features have none".into()));
                }
                Ok(Cow::Owned(fuse_box_coordinates(features, p.view())?))
            }
            None => Ok(Cow::Borrowed(features)),
        }
    }

    fn check_features(&self, features: &SequenceFeatures) -> Result<()> {
        if features.n() != self.dims.n {
            return Err(Error::Shape(format!(
                "model expects {} images, features hold {}",
                self.dims.n,
                features.n()
            )));
        }
        let expected = self.dims.box_input.unwrap_or(self.dims.d);
        if features.d() != expected {
            return Err(Error::Shape(format!(
                "model expects region dim {expected}, features have {}",
                features.d()
            )));
        }
        Ok(())
    }

    /// Attention maps, attended vectors and context embeddings for all sentences.
    pub fn contexts(&self, features: &SequenceFeatures, ablations: &Ablations) -> Result<ContextPass> {
        self.check_features(features)?;
        let fused = self.prepare_features(features)?;
        let fused = fused.as_ref();
        let (n, k, d) = fused.regions().dim();

        let (oia, beliefs, attended) = if ablations.no_oia {
            let means = fused.region_means();
            let mut attended = Array3::zeros((n, n, d));
            for s in 0..n {
                attended.slice_mut(s![s, .., ..]).assign(&means);
            }
            (None, Array3::from_elem((n, n, k), 1.0 / k as f64), attended)
        } else {
            let fwd = OiaForward::new(fused, &self.oia, &self.calib);
            let (b, a) = (fwd.beliefs.clone(), fwd.attended.clone());
            (Some(fwd), b, a)
        };

        let mut contexts = Array2::zeros((n, d));
        let mut isa_weights = Array2::zeros((n, n));
        let mut isa = Vec::with_capacity(n);
        for s in 0..n {
            let a = attended.slice(s![s, .., ..]);
            if ablations.no_isa {
                contexts.row_mut(s).assign(&a.mean_axis(ndarray::Axis(0)).expect("n >= 1"));
                isa_weights.row_mut(s).fill(1.0 / n as f64);
                isa.push(None);
            } else {
                let fwd = IsaForward::new(a, s, &self.isa);
                contexts.row_mut(s).assign(&fwd.context);
                isa_weights.row_mut(s).assign(&fwd.weights);
                isa.push(Some(fwd));
            }
        }
        Ok(ContextPass {
            fused: match features.boxes().is_some() && self.box_projection.is_some() {
                true => Some(fused.clone()),
                false => None,
            },
            oia,
            isa,
            maps: AttentionMaps(beliefs),
            attended: AttendedImages(attended),
            contexts,
            isa_weights,
        })
    }

    /// Gradient of the context embeddings back to all attention parameters.
    fn contexts_backward(
        &self,
        features: &SequenceFeatures,
        pass: &ContextPass,
        d_contexts: ArrayView2<f64>,
        grads: &mut ModelParams,
    ) {
        let fused = pass.fused.as_ref().unwrap_or(features);
        let (n, k, d) = fused.regions().dim();
        let mut d_attended = Array3::<f64>::zeros((n, n, d));
        for s in 0..n {
            let dc = d_contexts.row(s);
            match &pass.isa[s] {
                None => {
                    for i in 0..n {
                        d_attended.slice_mut(s![s, i, ..]).scaled_add(1.0 / n as f64, &dc);
                    }
                }
                Some(fwd) => {
                    let a = pass.attended.sentence(s);
                    let da = fwd.backward(a, &self.isa, dc, &mut grads.isa);
                    d_attended.slice_mut(s![s, .., ..]).assign(&da);
                }
            }
        }
        let d_regions = match &pass.oia {
            Some(fwd) => fwd.backward(fused, &self.oia, &self.calib, d_attended.view(), &mut grads.oia, &mut grads.calib),
            None => {
                let per_image = d_attended.sum_axis(ndarray::Axis(0)) / k as f64;
                let mut d_regions = Array3::zeros((n, k, d));
                for r in 0..k {
                    d_regions.slice_mut(s![.., r, ..]).assign(&per_image);
                }
                d_regions
            }
        };
        if let (Some(g), Some(_)) = (&mut grads.box_projection, &self.box_projection) {
            *g += &fuse_box_coordinates_backward(features, d_regions.view());
        }
    }

    fn check_story(&self, story: &Story) -> Result<()> {
        if story.n() != self.dims.n {
            return Err(Error::Shape(format!(
                "model expects {} sentences, story has {}",
                self.dims.n,
                story.n()
            )));
        }
        for &t in story.sentences().iter().flatten() {
            if t >= self.dims.vocab {
                return Err(Error::UnknownToken {
                    id: t,
                    size: self.dims.vocab,
                });
            }
        }
        Ok(())
    }

    fn sentence_passes(
        &self,
        story: &Story,
        contexts: ArrayView2<f64>,
        ablations: &Ablations,
        dropout: Option<&mut Dropout>,
    ) -> Result<Vec<SentencePass>> {
        let options = ablations.decoder_options();
        let vocab = self.dims.vocab;
        let mut dropout = dropout;
        let mut history = BowHistogram::new(vocab);
        let mut passes = Vec::with_capacity(story.n());
        for (s, sentence) in story.sentences().iter().enumerate() {
            let pass = SentencePass::forward(
                &self.decoder,
                contexts.row(s),
                &history,
                sentence,
                options,
                dropout.as_deref_mut(),
            )?;
            for &t in sentence {
                history.update(t);
            }
            passes.push(pass);
        }
        Ok(passes)
    }
}

/// Per-story forward state of the attention stack.
#[derive(Debug, Clone)]
pub struct ContextPass {
    fused: Option<SequenceFeatures>,
    oia: Option<OiaForward>,
    isa: Vec<Option<IsaForward>>,
    pub maps: AttentionMaps,
    pub attended: AttendedImages,
    /// `N × d`, row `s` conditions sentence `s`.
    pub contexts: Array2<f64>,
    /// `N × N`, row `s` weights the attended images of sentence `s`.
    pub isa_weights: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossOutput {
    /// Summed negative log-likelihood over every target token.
    pub total: f64,
    pub tokens: usize,
}

impl LossOutput {
    pub fn per_token(&self) -> f64 {
        self.total / self.tokens.max(1) as f64
    }
}

/// Teacher-forced negative log-likelihood of a story under the unpenalized
/// mixed word distribution.
pub fn story_loss(params: &ModelParams, features: &SequenceFeatures, story: &Story, ablations: &Ablations) -> Result<LossOutput> {
    params.check_story(story)?;
    let pass = params.contexts(features, ablations)?;
    let passes = params.sentence_passes(story, pass.contexts.view(), ablations, None)?;
    Ok(LossOutput {
        total: passes.iter().map(|p| p.loss).sum(),
        tokens: story.token_count(),
    })
}

/// Loss and its gradient scaled by `scale`.
pub fn story_loss_and_grad(
    params: &ModelParams,
    features: &SequenceFeatures,
    story: &Story,
    ablations: &Ablations,
    dropout: Option<&mut Dropout>,
    scale: f64,
    grads: &mut ModelParams,
) -> Result<LossOutput> {
    params.check_story(story)?;
    let pass = params.contexts(features, ablations)?;
    let passes = params.sentence_passes(story, pass.contexts.view(), ablations, dropout)?;
    let mut d_contexts = Array2::zeros(pass.contexts.dim());
    for (s, sp) in passes.iter().enumerate() {
        let dc = sp.backward(&params.decoder, scale, &mut grads.decoder);
        d_contexts.row_mut(s).assign(&dc);
    }
    params.contexts_backward(features, &pass, d_contexts.view(), grads);
    grads.calib.clear_unused();
    Ok(LossOutput {
        total: passes.iter().map(|p| p.loss).sum(),
        tokens: story.token_count(),
    })
}

/// Summed loss and gradient over several stories, computed in parallel and
/// reduced in input order.
pub fn batch_loss_and_grad(
    params: &ModelParams,
    items: &[(&SequenceFeatures, &Story, Option<Dropout>)],
    ablations: &Ablations,
    scale: f64,
) -> Result<(LossOutput, ModelParams)> {
    let results: Vec<Result<(LossOutput, ModelParams)>> = items
        .par_iter()
        .map(|(features, story, dropout)| {
            let mut grads = params.zeros_like();
            let mut dropout = dropout.clone();
            let loss = story_loss_and_grad(params, features, story, ablations, dropout.as_mut(), scale, &mut grads)?;
            Ok((loss, grads))
        })
        .collect();
    let mut total = params.zeros_like();
    let mut loss = LossOutput { total: 0.0, tokens: 0 };
    for r in results {
        let (l, g) = r?;
        loss.total += l.total;
        loss.tokens += l.tokens;
        total.scaled_add(1.0, &g);
    }
    Ok((loss, total))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedStory {
    /// One token list per sentence, ending in EOS when decoding finished.
    pub sentences: Vec<Vec<usize>>,
    pub maps: AttentionMaps,
    pub attended: AttendedImages,
    pub isa_weights: Array2<f64>,
    /// Gate value at each generated token.
    pub betas: Vec<Vec<f64>>,
}

/// Decodes sentences in order; each beam search starts from the histogram of
/// all sentences generated before it.
pub fn generate_story(
    params: &ModelParams,
    features: &SequenceFeatures,
    table: &StoryFrequencyTable,
    settings: &DecodeSettings,
    ablations: &Ablations,
) -> Result<GeneratedStory> {
    let pass = params.contexts(features, ablations)?;
    let mut settings = *settings;
    settings.options = ablations.decoder_options();
    if ablations.no_penalty {
        settings.penalty = 0.0;
    }
    if ablations.no_count_norm {
        settings.count_norm = false;
    }
    let mut history = BowHistogram::new(params.dims.vocab);
    let mut sentences = Vec::with_capacity(params.dims.n);
    let mut betas = Vec::with_capacity(params.dims.n);
    for s in 0..params.dims.n {
        let result = beam_search(pass.contexts.row(s), &history, &params.decoder, table, &settings)?;
        for &t in &result.tokens {
            history.update(t);
        }
        sentences.push(result.tokens);
        betas.push(result.betas);
    }
    Ok(GeneratedStory {
        sentences,
        maps: pass.maps,
        attended: pass.attended,
        isa_weights: pass.isa_weights,
        betas,
    })
}

/// Fresh per-story dropout stream derived from `(seed, epoch, index)`.
pub fn dropout_for(rate: f64, seed: u64, epoch: usize, index: usize) -> Option<Dropout> {
    use rand::SeedableRng;
    if rate <= 0.0 {
        return None;
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xd509_0u64.wrapping_mul(epoch as u64 + 1));
    rng.set_stream(index as u64);
    Some(Dropout::new(rate, rng))
}

/// Mean context vector, used by tests and exports.
pub fn mean_rows(a: ArrayView2<f64>) -> Array1<f64> {
    a.mean_axis(ndarray::Axis(0)).expect("at least one row")
}
