//! The bundled desk-scale benchmark: a multi-sine pre-training corpus and a
//! toy CTC task living in the same latent feature space.

use super::data::{Dataset, SineFeatures, ToyCtcTask};
use super::{Mode, TrainPlan};

/// Every split of the benchmark for one seed.
#[derive(Clone, Debug)]
pub struct ToyBench {
    pub pretrain: Dataset,
    pub held_out: Dataset,
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

fn split(seed: u64, k: u64) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(k)
}

impl ToyBench {
    pub const PRETRAIN_SIZE: usize = 512;
    pub const HELD_OUT_SIZE: usize = 16;
    pub const TRAIN_SIZE: usize = 200;
    pub const VAL_SIZE: usize = 32;
    pub const TEST_SIZE: usize = 64;

    pub fn new(dim: usize, seed: u64) -> Self {
        let corpus = SineFeatures {
            basis_seed: seed,
            ..SineFeatures::new(dim)
        };
        let task = ToyCtcTask::with_basis(corpus.basis(), seed);
        Self {
            pretrain: corpus.generate(Self::PRETRAIN_SIZE, split(seed, 1)),
            held_out: corpus.generate(Self::HELD_OUT_SIZE, split(seed, 2)),
            train: task.generate(Self::TRAIN_SIZE, split(seed, 3)),
            val: task.generate(Self::VAL_SIZE, split(seed, 4)),
            test: task.generate(Self::TEST_SIZE, split(seed, 5)),
        }
    }
}

/// Pre-training defaults for the benchmark.
pub fn pretrain_plan(mode: Mode, steps: usize, seed: u64) -> TrainPlan {
    TrainPlan {
        learning_rate: 3e-3,
        batch_size: 8,
        ..TrainPlan::new(mode, steps, seed)
    }
}

/// Fine-tuning defaults for the benchmark.
pub fn finetune_plan(mode: Mode, steps: usize, seed: u64) -> TrainPlan {
    TrainPlan {
        learning_rate: 1e-3,
        batch_size: 4,
        eval_every: 50,
        ..TrainPlan::new(mode, steps, seed)
    }
}
