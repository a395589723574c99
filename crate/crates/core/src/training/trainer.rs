use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::config::TrainConfig;
use crate::data::{Corpus, CorpusEntry, Split};
use crate::error::{Error, Result};
use crate::model::{batch_loss_and_grad, dropout_for, story_loss, Ablations, LossOutput, ModelDims, ModelParams};

/// Learning rate that decays after `patience` epochs without a new best
/// validation loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauSchedule {
    pub learning_rate: f64,
    pub decay: f64,
    pub patience: usize,
    pub best: Option<f64>,
    pub bad_epochs: usize,
}

impl PlateauSchedule {
    pub fn new(learning_rate: f64, decay: f64, patience: usize) -> Self {
        PlateauSchedule {
            learning_rate,
            decay,
            patience,
            best: None,
            bad_epochs: 0,
        }
    }

    /// Records an epoch's validation loss; returns whether it is a new best.
    pub fn observe(&mut self, metric: f64) -> bool {
        if self.best.is_none_or(|b| metric < b) {
            self.best = Some(metric);
            self.bad_epochs = 0;
            return true;
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= self.patience.max(1) {
            self.learning_rate *= self.decay;
            self.bad_epochs = 0;
        }
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-token loss over the epoch's minibatches, with dropout.
    pub train_loss: f64,
    /// Mean per-token loss on the validation split (training split when
    /// there is none), without dropout.
    pub val_loss: f64,
    /// Rate used during this epoch.
    pub learning_rate: f64,
    pub improved: bool,
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    pub adam: Adam,
    pub schedule: PlateauSchedule,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
}

impl TrainState {
    pub fn new(config: &TrainConfig, dims: ModelDims) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = ModelParams::random(dims, config.ablations.no_direction, &mut rng);
        let adam = Adam::new(&params, config.adam_beta1, config.adam_beta2, config.adam_epsilon);
        TrainState {
            params,
            adam,
            schedule: PlateauSchedule::new(config.learning_rate, config.lr_decay, config.patience),
            epoch: 0,
            history: Vec::new(),
        }
    }
}

/// Model dimensions implied by a corpus and a configuration.
pub fn model_dims(config: &TrainConfig, corpus: &Corpus, vocab_size: usize) -> Result<ModelDims> {
    config.validate()?;
    let first = corpus.entries().first().ok_or(Error::EmptyCorpus)?;
    let (n, k, raw) = (first.features.n(), first.features.k(), first.features.d());
    if n != config.n || k != config.k {
        return Err(Error::Shape(format!(
            "corpus has N={n}, K={k} but the configuration asks for N={}, K={}",
            config.n, config.k
        )));
    }
    if !config.fuse_boxes && raw != config.d {
        return Err(Error::Shape(format!(
            "region dimension {raw} differs from d={} (enable box fusion to project)",
            config.d
        )));
    }
    Ok(ModelDims {
        n,
        d: config.d,
        vocab: vocab_size,
        embed: config.embed_dim(),
        gamma: config.gamma,
        box_input: config.fuse_boxes.then_some(raw),
    })
}

/// Mean per-token loss over entries, evaluated in parallel and summed in order.
pub fn evaluate_loss<'a, I>(params: &ModelParams, entries: I, ablations: &Ablations) -> Result<LossOutput>
where
    I: IntoIterator<Item = &'a CorpusEntry>,
{
    let entries: Vec<&CorpusEntry> = entries.into_iter().collect();
    let losses: Vec<Result<LossOutput>> = entries
        .par_iter()
        .map(|e| story_loss(params, &e.features, &e.story, ablations))
        .collect();
    let mut total = LossOutput { total: 0.0, tokens: 0 };
    for l in losses {
        let l = l?;
        total.total += l.total;
        total.tokens += l.tokens;
    }
    Ok(total)
}

pub struct Trainer<'a> {
    config: TrainConfig,
    corpus: &'a Corpus,
    train: Vec<&'a CorpusEntry>,
    state: TrainState,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, corpus: &'a Corpus, vocab_size: usize) -> Result<Self> {
        let dims = model_dims(&config, corpus, vocab_size)?;
        let state = TrainState::new(&config, dims);
        Self::resume(config, corpus, state)
    }

    pub fn resume(config: TrainConfig, corpus: &'a Corpus, state: TrainState) -> Result<Self> {
        config.validate()?;
        let train: Vec<&CorpusEntry> = corpus.split(Split::Train).collect();
        if train.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(Trainer {
            config,
            corpus,
            train,
            state,
        })
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64 + 1);
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut rng);
        order
    }

    /// Runs one epoch of minibatch updates followed by validation.
    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let epoch = self.state.epoch;
        let lr = self.state.schedule.learning_rate;
        let ablations = self.config.ablations;
        let mut epoch_loss = LossOutput { total: 0.0, tokens: 0 };
        for batch in self.epoch_order(epoch).chunks(self.config.batch_size) {
            let items: Vec<_> = batch
                .iter()
                .map(|&i| {
                    let e = self.train[i];
                    (&*e.features, &e.story, dropout_for(self.config.dropout, self.config.seed, epoch, i))
                })
                .collect();
            let tokens: usize = items.iter().map(|(_, s, _)| s.token_count()).sum();
            let (loss, grads) = batch_loss_and_grad(&self.state.params, &items, &ablations, 1.0 / tokens as f64)?;
            if !loss.total.is_finite() {
                return Err(Error::Diverged { epoch, loss: loss.total });
            }
            self.state.adam.update(&mut self.state.params, &grads, lr);
            epoch_loss.total += loss.total;
            epoch_loss.tokens += loss.tokens;
        }
        let val_entries: Vec<&CorpusEntry> = self.corpus.split(Split::Val).collect();
        let val = if val_entries.is_empty() {
            evaluate_loss(&self.state.params, self.train.iter().copied(), &ablations)?
        } else {
            evaluate_loss(&self.state.params, val_entries, &ablations)?
        };
        let val_loss = val.per_token();
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch, loss: val_loss });
        }
        let improved = self.state.schedule.observe(val_loss);
        let record = EpochRecord {
            epoch,
            train_loss: epoch_loss.per_token(),
            val_loss,
            learning_rate: lr,
            improved,
        };
        self.state.history.push(record);
        self.state.epoch += 1;
        Ok(record)
    }

    /// Trains until `config.max_epochs` epochs are complete in total. The
    /// callback sees each record with the state after that epoch.
    pub fn run<F>(&mut self, mut on_epoch: F) -> Result<()>
    where
        F: FnMut(&EpochRecord, &TrainState) -> Result<()>,
    {
        while self.state.epoch < self.config.max_epochs {
            let record = self.run_epoch()?;
            on_epoch(&record, &self.state)?;
        }
        Ok(())
    }
}

/// Trains from scratch for `config.max_epochs` epochs.
pub fn train(config: &TrainConfig, corpus: &Corpus, vocab_size: usize) -> Result<TrainState> {
    let mut trainer = Trainer::new(config.clone(), corpus, vocab_size)?;
    trainer.run(|_, _| Ok(()))?;
    Ok(trainer.into_state())
}
