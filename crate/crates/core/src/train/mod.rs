//! Run configuration and the pretraining loop.

mod config;
mod trainer;

pub use config::{digest_of, RunConfig, DEFAULT_LEARNING_RATE};
pub use trainer::{
    instance_spec, pretrain, seeded_stream, thread_budget, BatchSource, Dataset, PretrainOptions,
    PretrainSummary, StepRecord, Trainer, THREADS_ENV,
};
