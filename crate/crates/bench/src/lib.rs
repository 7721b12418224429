//! Shared fixtures for the criterion benchmarks.

use varattn::data::SyntheticTaskSpec;
use varattn::experiment::PreparedTask;
use varattn::{Batch, GaussianNoise, Model, ModelConfig, NoiseSource, Tensor, Variant};

/// Gaussian matrix from a fixed stream.
pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
    GaussianNoise::new(seed).draw(rows, cols)
}

/// One-to-many task at desk scale, with a held-out split of 100 sources.
pub fn task() -> PreparedTask {
    let spec = SyntheticTaskSpec::one_to_many(30, 4, 8, 2000, 3, 17);
    PreparedTask::new(&spec, 100).expect("valid task")
}

/// Untrained model sized like the desk experiments.
pub fn model(task: &PreparedTask, variant: Variant) -> Model {
    let template = ModelConfig::new(variant, 0, 0).with_dims(16, 24, 8);
    Model::new(task.model_config(&template, variant, 1)).expect("valid config")
}

/// The first `size` training pairs as a batch.
pub fn batch(task: &PreparedTask, size: usize) -> Batch {
    Batch::from_pairs(&task.train.pairs[..size])
}
