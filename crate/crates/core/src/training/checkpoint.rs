use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::config::TrainConfig;
use super::trainer::{EpochRecord, PlateauSchedule, TrainState};
use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::history::StoryFrequencyTable;
use crate::model::{ModelDims, ModelParams};

pub const CHECKPOINT_FORMAT: &str = "storyline-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

fn to_records(params: &ModelParams) -> Vec<TensorRecord> {
    params
        .tensors()
        .into_iter()
        .map(|(name, t)| TensorRecord {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            data: t.iter().copied().collect(),
        })
        .collect()
}

fn from_records(dims: ModelDims, tied: bool, records: &[TensorRecord]) -> Result<ModelParams> {
    let mut params = ModelParams::zeros(dims);
    params.oia.tied = tied;
    let mut tensors = params.tensors_mut();
    if tensors.len() != records.len() {
        return Err(Error::parse(
            "checkpoint",
            format!("expected {} tensors, found {}", tensors.len(), records.len()),
        ));
    }
    for rec in records {
        let (_, view) = tensors
            .iter_mut()
            .find(|(name, _)| *name == rec.name)
            .ok_or_else(|| Error::parse("checkpoint", format!("unknown tensor `{}`", rec.name)))?;
        if view.shape() != rec.shape.as_slice() || rec.data.len() != view.len() {
            return Err(Error::Shape(format!(
                "tensor `{}` has shape {:?}, model expects {:?}",
                rec.name,
                rec.shape,
                view.shape()
            )));
        }
        for (dst, &src) in view.iter_mut().zip(&rec.data) {
            *dst = src;
        }
    }
    drop(tensors);
    Ok(params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerRecord {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    pub first: Vec<TensorRecord>,
    pub second: Vec<TensorRecord>,
}

/// Serialized model plus the training state needed to resume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: TrainConfig,
    pub vocab_hash: String,
    pub dims: ModelDims,
    pub tied_directions: bool,
    pub epoch: usize,
    pub schedule: PlateauSchedule,
    pub history: Vec<EpochRecord>,
    /// Story frequency per token id, used at decoding time.
    pub story_frequency: Option<Vec<f64>>,
    pub tensors: Vec<TensorRecord>,
    pub optimizer: OptimizerRecord,
}

impl Checkpoint {
    pub fn new(
        config: &TrainConfig,
        vocab: &Vocabulary,
        state: &TrainState,
        table: Option<&StoryFrequencyTable>,
    ) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            config: config.clone(),
            vocab_hash: vocab.hash(),
            dims: state.params.dims,
            tied_directions: state.params.oia.tied,
            epoch: state.epoch,
            schedule: state.schedule.clone(),
            history: state.history.clone(),
            story_frequency: table.map(|t| t.values().to_vec()),
            tensors: to_records(&state.params),
            optimizer: OptimizerRecord {
                beta1: state.adam.beta1,
                beta2: state.adam.beta2,
                epsilon: state.adam.epsilon,
                step: state.adam.step,
                first: to_records(&state.adam.first),
                second: to_records(&state.adam.second),
            },
        }
    }

    pub fn check_vocab(&self, vocab: &Vocabulary) -> Result<()> {
        let found = vocab.hash();
        if found != self.vocab_hash {
            return Err(Error::VocabMismatch {
                expected: self.vocab_hash.clone(),
                found,
            });
        }
        Ok(())
    }

    pub fn params(&self) -> Result<ModelParams> {
        from_records(self.dims, self.tied_directions, &self.tensors)
    }

    pub fn story_frequency(&self) -> StoryFrequencyTable {
        match &self.story_frequency {
            Some(v) => StoryFrequencyTable::from_values(v.clone()),
            None => StoryFrequencyTable::uniform(self.dims.vocab),
        }
    }

    pub fn state(&self) -> Result<TrainState> {
        let params = self.params()?;
        let adam = Adam {
            beta1: self.optimizer.beta1,
            beta2: self.optimizer.beta2,
            epsilon: self.optimizer.epsilon,
            step: self.optimizer.step,
            first: from_records(self.dims, self.tied_directions, &self.optimizer.first)?,
            second: from_records(self.dims, self.tied_directions, &self.optimizer.second)?,
        };
        Ok(TrainState {
            params,
            adam,
            schedule: self.schedule.clone(),
            epoch: self.epoch,
            history: self.history.clone(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text)?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::parse("checkpoint", format!("unsupported format `{}`", ckpt.format)));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
