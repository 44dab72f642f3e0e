use rand::Rng;
use serde::Serialize;

use super::corpus::Document;
use super::instance::{PairSampler, TrainingInstance, SP_POSITIVE};
use super::masking::{apply_masking, MaskingConfig};
use crate::error::Result;
use crate::model::Objective;

/// Everything needed to turn documents into masked instances.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceSpec {
    pub objective: Objective,
    pub max_len: usize,
    pub short_prob: f64,
    pub masking: MaskingConfig,
    /// Upper bound (exclusive) for random replacement tokens.
    pub vocab_size: usize,
}

/// Summary of a generated instance set.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DataStats {
    pub instances: usize,
    /// Drawn span lengths, index `n - 1` counts length `n`.
    pub span_counts: Vec<usize>,
    pub span_frequencies: Vec<f64>,
    pub span_expected: Vec<f64>,
    pub masked_tokens: usize,
    pub usable_tokens: usize,
    pub positives: usize,
    pub negatives: usize,
    pub shortened: usize,
    pub mean_length: f64,
    pub min_length: usize,
    pub max_length: usize,
}

impl DataStats {
    pub fn short_fraction(&self) -> f64 {
        self.shortened as f64 / self.instances.max(1) as f64
    }

    pub fn positive_fraction(&self) -> f64 {
        self.positives as f64 / (self.positives + self.negatives).max(1) as f64
    }
}

pub fn generate_instances<R: Rng + ?Sized>(
    docs: &[Document],
    spec: &InstanceSpec,
    count: usize,
    rng: &mut R,
) -> Result<(Vec<TrainingInstance>, DataStats)> {
    spec.masking.validate()?;
    let sampler = PairSampler::new(docs, spec.max_len, spec.short_prob)?;
    sampler.check_objective(spec.objective)?;
    let mut stats = DataStats {
        span_counts: vec![0; spec.masking.max_ngram],
        span_expected: spec.masking.span_length_probs(),
        min_length: usize::MAX,
        ..Default::default()
    };
    let mut out = Vec::with_capacity(count);
    let mut total_len = 0;
    for _ in 0..count {
        let mut inst = sampler.sample(spec.objective, rng)?;
        let report = apply_masking(&mut inst, &spec.masking, spec.vocab_size, rng)?;
        for n in report.sampled_lengths {
            stats.span_counts[n - 1] += 1;
        }
        stats.masked_tokens += report.masked;
        stats.usable_tokens += report.usable;
        match inst.sp_label {
            Some(SP_POSITIVE) => stats.positives += 1,
            Some(_) => stats.negatives += 1,
            None => {}
        }
        stats.shortened += usize::from(inst.shortened);
        total_len += inst.len();
        stats.min_length = stats.min_length.min(inst.len());
        stats.max_length = stats.max_length.max(inst.len());
        out.push(inst);
    }
    stats.instances = count;
    stats.mean_length = total_len as f64 / count.max(1) as f64;
    if count == 0 {
        stats.min_length = 0;
    }
    let drawn: usize = stats.span_counts.iter().sum();
    stats.span_frequencies = stats
        .span_counts
        .iter()
        .map(|&c| c as f64 / drawn.max(1) as f64)
        .collect();
    Ok((out, stats))
}
