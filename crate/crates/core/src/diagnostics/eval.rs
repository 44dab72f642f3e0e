use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::vocab::PAD;
use crate::data::{pack_batches, Batch, TrainingInstance, SP_POSITIVE};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::{forward, ModelConfig, ParameterStore};

/// Raw prediction counts, summable across batches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tally {
    pub mlm_correct: usize,
    pub mlm_total: usize,
    pub sp_correct: usize,
    pub sp_total: usize,
    pub sp_positive: usize,
}

impl std::ops::AddAssign for Tally {
    fn add_assign(&mut self, o: Self) {
        self.mlm_correct += o.mlm_correct;
        self.mlm_total += o.mlm_total;
        self.sp_correct += o.sp_correct;
        self.sp_total += o.sp_total;
        self.sp_positive += o.sp_positive;
    }
}

impl Tally {
    fn mlm_accuracy(&self) -> Option<f64> {
        (self.mlm_total > 0).then(|| self.mlm_correct as f64 / self.mlm_total as f64)
    }

    fn sp_accuracy(&self) -> Option<f64> {
        (self.sp_total > 0).then(|| self.sp_correct as f64 / self.sp_total as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mlm_accuracy: Option<f64>,
    pub mlm_count: usize,
    pub sp_accuracy: Option<f64>,
    pub sp_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nsp_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nsp_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sop_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sop_count: Option<usize>,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_digest: Option<String>,
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Eval-mode predictions on one batch.
pub fn score_batch(store: &ParameterStore, cfg: &ModelConfig, batch: &Batch) -> Result<Tally> {
    let mut graph = Graph::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = forward(&mut graph, store, cfg, batch, false, false, &mut rng)?;
    let v = cfg.vocab_size;
    let logits = graph.value(out.mlm_logits).data();
    let mut tally = Tally::default();
    for (b, (pos, tgt)) in batch
        .masked_positions
        .iter()
        .zip(&batch.masked_targets)
        .enumerate()
    {
        for (&p, &t) in pos.iter().zip(tgt) {
            let row = (b * batch.seq_len + p) * v;
            tally.mlm_total += 1;
            tally.mlm_correct += usize::from(argmax(&logits[row..row + v]) == t);
        }
    }
    if let (Some(sp), Some(labels)) = (out.sp_logits, &batch.sp_labels) {
        let sp = graph.value(sp).data();
        for (i, &label) in labels.iter().enumerate() {
            tally.sp_total += 1;
            tally.sp_positive += usize::from(label == SP_POSITIVE as usize);
            tally.sp_correct += usize::from(argmax(&sp[2 * i..2 * i + 2]) == label);
        }
    }
    Ok(tally)
}

fn tally_set(
    store: &ParameterStore,
    cfg: &ModelConfig,
    instances: &[TrainingInstance],
    batch_size: usize,
    what: &str,
) -> Result<Tally> {
    if instances.is_empty() {
        return Err(Error::Data(format!("{what} evaluation set is empty")));
    }
    let mut total = Tally::default();
    for batch in pack_batches(instances, batch_size, cfg.max_positions(), PAD)? {
        total += score_batch(store, cfg, &batch)?;
    }
    Ok(total)
}

/// MLM accuracy over masked positions and, when the model has a
/// sentence-pair head and the instances are labelled, its accuracy.
pub fn intrinsic_eval(
    store: &ParameterStore,
    cfg: &ModelConfig,
    instances: &[TrainingInstance],
    batch_size: usize,
) -> Result<EvalReport> {
    let t = tally_set(store, cfg, instances, batch_size, "intrinsic")?;
    if t.mlm_total == 0 && t.sp_total == 0 {
        return Err(Error::Data(
            "evaluation set has neither masked positions nor labels".into(),
        ));
    }
    Ok(EvalReport {
        mlm_accuracy: t.mlm_accuracy(),
        mlm_count: t.mlm_total,
        sp_accuracy: t.sp_accuracy(),
        sp_count: t.sp_total,
        nsp_accuracy: None,
        nsp_count: None,
        sop_accuracy: None,
        sop_count: None,
        warnings: Vec::new(),
        config_digest: None,
    })
}

fn imbalance_warning(name: &str, t: &Tally) -> Option<String> {
    let frac = t.sp_positive as f64 / t.sp_total as f64;
    (!(0.4..=0.6).contains(&frac)).then(|| {
        format!("{name} set label balance is {:.1}% positive", 100.0 * frac)
    })
}

/// Scores the single sentence-pair head on an NSP-style and an SOP-style set.
pub fn cross_objective_eval(
    store: &ParameterStore,
    cfg: &ModelConfig,
    nsp_set: &[TrainingInstance],
    sop_set: &[TrainingInstance],
    batch_size: usize,
) -> Result<EvalReport> {
    if !cfg.objective.has_sentence_pair() {
        return Err(Error::Config(
            "cross-objective evaluation needs a sentence-pair head".into(),
        ));
    }
    let nsp = tally_set(store, cfg, nsp_set, batch_size, "NSP")?;
    let sop = tally_set(store, cfg, sop_set, batch_size, "SOP")?;
    for (name, t) in [("NSP", &nsp), ("SOP", &sop)] {
        if t.sp_total == 0 {
            return Err(Error::Data(format!("{name} evaluation set carries no labels")));
        }
    }
    let mut all = nsp;
    all += sop;
    let warnings = [imbalance_warning("NSP", &nsp), imbalance_warning("SOP", &sop)]
        .into_iter()
        .flatten()
        .collect::<Vec<_>>();
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(EvalReport {
        mlm_accuracy: all.mlm_accuracy(),
        mlm_count: all.mlm_total,
        sp_accuracy: all.sp_accuracy(),
        sp_count: all.sp_total,
        nsp_accuracy: nsp.sp_accuracy(),
        nsp_count: Some(nsp.sp_total),
        sop_accuracy: sop.sp_accuracy(),
        sop_count: Some(sop.sp_total),
        warnings,
        config_digest: None,
    })
}
