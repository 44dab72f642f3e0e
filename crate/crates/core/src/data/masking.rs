//! N-gram masking for the MLM objective.
//!
//! Span lengths follow `p(n) = (1/n) / sum_{k=1..N} 1/k`, so short spans
//! dominate but bigrams and trigrams of whole words are regularly masked.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::instance::TrainingInstance;
use super::vocab::{is_special, MASK, NUM_SPECIAL};
use crate::error::{Error, Result};

/// How a selected span is corrupted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplaceProbs {
    pub mask: f64,
    pub random: f64,
    pub keep: f64,
}

impl Default for ReplaceProbs {
    fn default() -> Self {
        Self {
            mask: 0.8,
            random: 0.1,
            keep: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskingConfig {
    pub max_ngram: usize,
    pub budget: f64,
    pub replace_probs: ReplaceProbs,
}

impl Default for MaskingConfig {
    fn default() -> Self {
        Self {
            max_ngram: 3,
            budget: 0.15,
            replace_probs: ReplaceProbs::default(),
        }
    }
}

impl MaskingConfig {
    pub fn validate(&self) -> Result<()> {
        let p = self.replace_probs;
        if self.max_ngram == 0 {
            return Err(Error::Config("max_ngram must be at least 1".into()));
        }
        if !(self.budget > 0.0 && self.budget < 1.0) {
            return Err(Error::Config(format!(
                "mask budget {} outside (0, 1)",
                self.budget
            )));
        }
        if [p.mask, p.random, p.keep].iter().any(|&x| x < 0.0)
            || (p.mask + p.random + p.keep - 1.0).abs() > 1e-9
        {
            return Err(Error::Config(format!(
                "replace probabilities {p:?} must be nonnegative and sum to 1"
            )));
        }
        Ok(())
    }

    /// `p(1..=N)` in closed form.
    pub fn span_length_probs(&self) -> Vec<f64> {
        let norm: f64 = (1..=self.max_ngram).map(|k| 1.0 / k as f64).sum();
        (1..=self.max_ngram)
            .map(|n| (1.0 / n as f64) / norm)
            .collect()
    }
}

pub fn sample_span_length<R: Rng + ?Sized>(mc: &MaskingConfig, rng: &mut R) -> usize {
    let probs = mc.span_length_probs();
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i + 1;
        }
    }
    probs.len()
}

/// Number of positions to mask among `usable` candidates.
pub fn mask_budget(budget: f64, usable: usize) -> usize {
    // the epsilon keeps e.g. 0.15 * 20 from rounding up to 4
    ((budget * usable as f64 - 1e-9).ceil() as usize).clamp(1, usable)
}

/// What [`apply_masking`] did.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MaskingReport {
    pub masked: usize,
    pub usable: usize,
    /// Span lengths as drawn, before truncation at boundaries.
    pub sampled_lengths: Vec<usize>,
}

/// Masks `ceil(budget * usable)` positions in n-gram spans.
///
/// Spans stop at special tokens, padding, already-masked positions and the
/// budget. Each span is corrupted as a unit: all `[MASK]`, all random tokens,
/// or left unchanged. When no position is usable the instance is returned
/// untouched and the report has `masked == 0`.
pub fn apply_masking<R: Rng + ?Sized>(
    inst: &mut TrainingInstance,
    mc: &MaskingConfig,
    vocab_size: usize,
    rng: &mut R,
) -> Result<MaskingReport> {
    if !inst.masked_positions.is_empty() {
        return Err(Error::Usage("instance is already masked".into()));
    }
    mc.validate()?;
    let len = inst.token_ids.len();
    let usable_at = |i: usize, t: &[usize]| inst.padding_mask[i] && !is_special(t[i]);
    let usable: Vec<usize> = (0..len).filter(|&i| usable_at(i, &inst.token_ids)).collect();
    let mut report = MaskingReport {
        usable: usable.len(),
        ..Default::default()
    };
    if usable.is_empty() {
        return Ok(report);
    }
    let target = mask_budget(mc.budget, usable.len());
    let mut masked = vec![false; len];
    let mut spans: Vec<Vec<usize>> = Vec::new();
    let mut count = 0;
    while count < target {
        let candidates: Vec<usize> = usable.iter().copied().filter(|&i| !masked[i]).collect();
        let start = candidates[rng.random_range(0..candidates.len())];
        let n = sample_span_length(mc, rng);
        report.sampled_lengths.push(n);
        let mut span = Vec::with_capacity(n);
        let mut pos = start;
        while span.len() < n
            && count < target
            && pos < len
            && usable_at(pos, &inst.token_ids)
            && !masked[pos]
        {
            masked[pos] = true;
            span.push(pos);
            count += 1;
            pos += 1;
        }
        spans.push(span);
    }

    let original = inst.token_ids.clone();
    let p = mc.replace_probs;
    for span in &spans {
        let r: f64 = rng.random();
        if r < p.mask {
            span.iter().for_each(|&i| inst.token_ids[i] = MASK);
        } else if r < p.mask + p.random && vocab_size > NUM_SPECIAL {
            for &i in span {
                inst.token_ids[i] = rng.random_range(NUM_SPECIAL..vocab_size);
            }
        }
    }
    let mut positions: Vec<usize> = spans.into_iter().flatten().collect();
    positions.sort_unstable();
    inst.masked_targets = positions.iter().map(|&i| original[i]).collect();
    inst.masked_positions = positions;
    report.masked = count;
    Ok(report)
}
