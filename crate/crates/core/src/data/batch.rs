use super::instance::TrainingInstance;
use crate::error::{Error, Result};

/// Marker for positions that carry no MLM target.
pub const IGNORE_TARGET: i64 = -1;

/// Right-padded instances laid out row-major as `[batch_size, seq_len]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub batch_size: usize,
    pub seq_len: usize,
    pub token_ids: Vec<usize>,
    pub segment_ids: Vec<usize>,
    /// `true` for real tokens, `false` for padding.
    pub padding_mask: Vec<bool>,
    pub masked_positions: Vec<Vec<usize>>,
    pub masked_targets: Vec<Vec<usize>>,
    /// Present iff every instance carries a sentence-pair label.
    pub sp_labels: Option<Vec<usize>>,
}

impl Batch {
    /// Per-position MLM targets, [`IGNORE_TARGET`] where nothing is masked.
    pub fn mlm_targets(&self) -> Vec<i64> {
        let mut t = vec![IGNORE_TARGET; self.batch_size * self.seq_len];
        for (b, (pos, tgt)) in self
            .masked_positions
            .iter()
            .zip(&self.masked_targets)
            .enumerate()
        {
            for (&p, &id) in pos.iter().zip(tgt) {
                t[b * self.seq_len + p] = id as i64;
            }
        }
        t
    }

    pub fn num_masked(&self) -> usize {
        self.masked_positions.iter().map(Vec::len).sum()
    }
}

/// Pads `instances` to their longest length with `pad_id`.
pub fn pack_batch(instances: &[TrainingInstance], max_len: usize, pad_id: usize) -> Result<Batch> {
    if instances.is_empty() {
        return Err(Error::Data("cannot pack an empty batch".into()));
    }
    if let Some(long) = instances.iter().find(|i| i.len() > max_len) {
        return Err(Error::Data(format!(
            "instance of length {} exceeds max_len {max_len}",
            long.len()
        )));
    }
    let seq_len = instances.iter().map(TrainingInstance::len).max().unwrap_or(0);
    let batch_size = instances.len();
    let mut batch = Batch {
        batch_size,
        seq_len,
        token_ids: Vec::with_capacity(batch_size * seq_len),
        segment_ids: Vec::with_capacity(batch_size * seq_len),
        padding_mask: Vec::with_capacity(batch_size * seq_len),
        masked_positions: Vec::with_capacity(batch_size),
        masked_targets: Vec::with_capacity(batch_size),
        sp_labels: None,
    };
    for inst in instances {
        let pad = seq_len - inst.len();
        batch.token_ids.extend(&inst.token_ids);
        batch.token_ids.extend(std::iter::repeat_n(pad_id, pad));
        batch
            .segment_ids
            .extend(inst.segment_ids.iter().map(|&s| s as usize));
        batch.segment_ids.extend(std::iter::repeat_n(0, pad));
        batch.padding_mask.extend(&inst.padding_mask);
        batch.padding_mask.extend(std::iter::repeat_n(false, pad));
        batch.masked_positions.push(inst.masked_positions.clone());
        batch.masked_targets.push(inst.masked_targets.clone());
    }
    batch.sp_labels = instances
        .iter()
        .map(|i| i.sp_label.map(usize::from))
        .collect();
    Ok(batch)
}

/// Chunks `instances` into batches of at most `batch_size`.
pub fn pack_batches(
    instances: &[TrainingInstance],
    batch_size: usize,
    max_len: usize,
    pad_id: usize,
) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    instances
        .chunks(batch_size)
        .map(|c| pack_batch(c, max_len, pad_id))
        .collect()
}
