//! Perturbation-conditioned projection head (PCSCT) and its training.

mod loss;
mod model;
mod train;

use std::path::Path;

pub use loss::{cosine, infonce, pool_and_sim, InfoNceOutput};
pub use model::{Block, ConditioningVector, PcsctConfig, PcsctModel, PpeCache, SequenceCache};
pub use train::{
    loss_and_grads, train, AudioSource, BatchItem, CleanConditioning, ConstantValidator, EmbeddingItem, EmbeddingSource, LogRow,
    TrainConfig, TrainOutcome, TrainingPair, TrainingSource, Validator,
};

use crate::embedding::EmbeddingSequence;
use crate::error::Result;
use crate::nn::{read_checkpoint, write_checkpoint};

/// Inference: projects a `T x 768` sequence to `T x 128` under `c`, or under
/// the NULL conditioning when `c` is `None`.
pub fn embed_pamt(
    e: &EmbeddingSequence,
    model: &PcsctModel<f32>,
    c: Option<&ConditioningVector<f32>>,
) -> Result<EmbeddingSequence> {
    match c {
        Some(c) => model.project(e, c),
        None => model.project(e, &model.null_condition()),
    }
}

pub fn save_model(model: &PcsctModel<f32>, path: impl AsRef<Path>) -> Result<()> {
    write_checkpoint(&model.to_checkpoint(), path)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<PcsctModel<f32>> {
    PcsctModel::from_checkpoint(&read_checkpoint(path)?)
}

#[cfg(test)]
mod tests;
