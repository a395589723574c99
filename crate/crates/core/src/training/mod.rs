//! Maximum-likelihood training, gradient verification and synthetic corpora.

pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod embeddings;
pub mod gradcheck;
pub mod toy;
pub mod trainer;

pub use adam::Adam;
pub use checkpoint::Checkpoint;
pub use config::TrainConfig;
pub use embeddings::{apply_pretrained_embeddings, load_pretrained_embeddings};
pub use gradcheck::{check_gradients, gradient_check, relative_error, GradCheckReport};
pub use toy::{make_toy_corpus, ToyCorpus, ToySpec};
pub use trainer::{evaluate_loss, model_dims, train, EpochRecord, PlateauSchedule, TrainState, Trainer};
