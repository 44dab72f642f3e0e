use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::model::{compute_gradients, count_parameters, ModelConfig, ParameterStore};
use crate::optim::{lamb_step, LambConfig, OptimizerState};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThroughputReport {
    pub examples_per_sec: f64,
    pub timed_steps: usize,
    pub batch_size: usize,
    pub seq_len: usize,
    pub num_parameters: usize,
    pub param_bytes: usize,
}

/// Times forward, backward and one optimizer step per iteration on a copy
/// of `store`. The first step is discarded as warmup.
pub fn measure_throughput(
    store: &ParameterStore,
    cfg: &ModelConfig,
    batch: &Batch,
    steps: usize,
) -> Result<ThroughputReport> {
    if steps < 3 {
        return Err(Error::Config(format!(
            "throughput needs at least 3 steps, got {steps}"
        )));
    }
    let mut params = store.clone();
    let mut opt = OptimizerState::new(LambConfig::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut start = Instant::now();
    for step in 0..steps {
        if step == 1 {
            start = Instant::now();
        }
        compute_gradients(&mut params, cfg, batch, true, &mut rng)?;
        lamb_step(&mut params, &mut opt, 1e-4)?;
    }
    let secs = start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE);
    let timed = steps - 1;
    let total = count_parameters(cfg)?.total;
    Ok(ThroughputReport {
        examples_per_sec: (timed * batch.batch_size) as f64 / secs,
        timed_steps: timed,
        batch_size: batch.batch_size,
        seq_len: batch.seq_len,
        num_parameters: total,
        param_bytes: total * std::mem::size_of::<f64>(),
    })
}
