//! Fixtures shared by the integration suites.
#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::Path;

use albert_lab::data::vocab::{CLS, PAD, SEP};
use albert_lab::data::{
    apply_masking, pack_batch, Batch, Document, MaskingConfig, TrainingInstance,
};
use albert_lab::model::{
    build_model, compute_gradients, evaluate_loss, ModelConfig, Objective, ParameterStore,
    SharingStrategy,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// L=2, H=16, E=8, A=2, V=37 with MLM+SOP.
pub fn grad_check_config() -> ModelConfig {
    ModelConfig {
        num_layers: 2,
        hidden_size: 16,
        num_heads: Some(2),
        embedding_size: 8,
        vocab_size: 37,
        ffn_size: None,
        max_positions: Some(16),
        sharing: SharingStrategy::All,
        group_size: None,
        dropout_p: 0.0,
        objective: Objective::MlmSop,
        factorize_embedding: None,
    }
    .validate()
    .unwrap()
}

/// Random masked sentence pairs packed into one batch of `seq_len` columns.
/// Row lengths vary so padding is exercised.
pub fn random_batch(cfg: &ModelConfig, batch_size: usize, seq_len: usize, seed: u64) -> Batch {
    let mut r = rng(seed);
    let mc = MaskingConfig::default();
    let insts: Vec<TrainingInstance> = (0..batch_size)
        .map(|row| {
            let body = if row == 0 { seq_len - 3 } else { seq_len - 3 - row % 3 };
            let na = body / 2;
            let tok = |r: &mut ChaCha8Rng| r.random_range(5..cfg.vocab_size);
            let a: Vec<usize> = (0..na).map(|_| tok(&mut r)).collect();
            let b: Vec<usize> = (0..body - na).map(|_| tok(&mut r)).collect();
            let label = cfg.objective.has_sentence_pair().then(|| (row % 2) as u8);
            let mut inst = TrainingInstance::pack(&a, &b, label);
            apply_masking(&mut inst, &mc, cfg.vocab_size, &mut r).unwrap();
            inst
        })
        .collect();
    pack_batch(&insts, seq_len, PAD).unwrap()
}

/// Analytic against central-difference gradients, per parameter tensor.
pub struct TensorCheck {
    pub path: String,
    /// `|a - n| / max(|a|, |n|, floor)` in the L2 norm over the whole tensor.
    pub norm_rel: f64,
    /// Worst elementwise `|a - n| / max(|a|, |n|, floor)`.
    pub elem_rel: f64,
}

pub fn finite_difference_check(
    cfg: &ModelConfig,
    batch: &Batch,
    seed: u64,
    h: f64,
    floor: f64,
) -> Vec<TensorCheck> {
    let mut store = build_model(cfg, seed).unwrap();
    compute_gradients(&mut store, cfg, batch, false, &mut rng(0)).unwrap();
    let analytic: Vec<(String, Vec<f64>)> = store
        .iter()
        .map(|(p, t)| (p.to_string(), t.grad().unwrap().to_vec()))
        .collect();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut out = Vec::new();
    for (path, grad) in analytic {
        let mut numeric = vec![0.0; grad.len()];
        for (i, n) in numeric.iter_mut().enumerate() {
            let base = store.get(&path).unwrap().data()[i];
            let mut loss_at = |x: f64| {
                store.get_mut(&path).unwrap().data_mut()[i] = x;
                evaluate_loss(&store, cfg, batch, false, &mut rng(0)).unwrap().total
            };
            *n = (loss_at(base + h) - loss_at(base - h)) / (2.0 * h);
            loss_at(base);
        }
        let diff: Vec<f64> = grad.iter().zip(&numeric).map(|(a, n)| a - n).collect();
        let scale = norm(&grad).max(norm(&numeric)).max(floor);
        let elem_rel = grad
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
            .fold(0.0, f64::max);
        out.push(TensorCheck {
            path,
            norm_rel: norm(&diff) / scale,
            elem_rel,
        });
    }
    out
}

/// Every (layer, attention group, ffn group) path pair from a shared store to
/// its unrolled copy, as (shared path, per-layer paths).
pub fn shared_to_unrolled(cfg: &ModelConfig) -> Vec<(String, Vec<String>)> {
    use albert_lab::model::paths;
    let mut out = Vec::new();
    for name in paths::ATTENTION_PARAMS {
        let layers = (0..cfg.num_layers).map(|l| paths::attention(l, name)).collect();
        out.push((paths::attention(0, name), layers));
    }
    for name in paths::FFN_PARAMS {
        let layers = (0..cfg.num_layers).map(|l| paths::ffn(l, name)).collect();
        out.push((paths::ffn(0, name), layers));
    }
    out
}

pub fn grads(store: &ParameterStore, path: &str) -> Vec<f64> {
    store.get(path).unwrap().grad().unwrap().to_vec()
}

// ---------------------------------------------------------------------------
// Corpora

/// Documents whose token ids encode their origin:
/// `id = 5 + doc * 1000 + segment * 40 + position`.
pub fn coded_documents(n_docs: usize, seed: u64) -> Vec<Document> {
    let mut r = rng(seed);
    (0..n_docs)
        .map(|d| Document {
            segments: (0..r.random_range(2..8))
                .map(|s| {
                    let len = r.random_range(1..30);
                    (0..len).map(|p| 5 + d * 1000 + s * 40 + p).collect()
                })
                .collect(),
        })
        .collect()
}

/// (doc, segment, position) of a coded token.
pub fn decode(id: usize) -> (usize, usize, usize) {
    let x = id - 5;
    (x / 1000, (x % 1000) / 40, x % 40)
}

/// Keeps at most `budget` tokens, popping from the tail of the longer side.
pub fn oracle_truncate(mut a: Vec<usize>, mut b: Vec<usize>, budget: usize) -> (Vec<usize>, Vec<usize>) {
    while a.len() + b.len() > budget {
        if a.len() >= b.len() {
            a.pop();
        } else {
            b.pop();
        }
    }
    (a, b)
}

/// Splits an unmasked `[CLS] a [SEP] b [SEP]` sequence.
pub fn split_pair(tokens: &[usize]) -> Option<(Vec<usize>, Vec<usize>)> {
    if tokens.first() != Some(&CLS) || tokens.last() != Some(&SEP) {
        return None;
    }
    let body = &tokens[1..tokens.len() - 1];
    let sep = body.iter().position(|&t| t == SEP)?;
    let (a, b) = (&body[..sep], &body[sep + 1..]);
    if b.contains(&SEP) {
        return None;
    }
    Some((a.to_vec(), b.to_vec()))
}

const SUBJECTS: [(&str, &str, &str); 6] = [
    ("cat", "sleeps", "mat"),
    ("dog", "runs", "park"),
    ("bird", "sings", "tree"),
    ("fish", "swims", "pond"),
    ("cow", "eats", "field"),
    ("bee", "hums", "garden"),
];
const TIMES: [&str; 4] = ["morning", "noon", "evening", "night"];
const MOODS: [&str; 3] = ["happily", "quietly", "slowly"];

/// Deterministic sentence templates over a vocabulary of about 40 words.
/// The subject fixes its verb and place; the time and manner vary freely.
pub fn template_corpus(n_docs: usize, seed: u64) -> String {
    let mut r = rng(seed);
    let mut text = String::new();
    for _ in 0..n_docs {
        for _ in 0..r.random_range(3..6) {
            let (s, v, p) = SUBJECTS[r.random_range(0..SUBJECTS.len())];
            let t = TIMES[r.random_range(0..TIMES.len())];
            let m = MOODS[r.random_range(0..MOODS.len())];
            writeln!(text, "the {s} {v} {m} in the {p} every {t}").unwrap();
        }
        text.push('\n');
    }
    text
}

/// Shape of [`topic_order_corpus`].
#[derive(Debug, Clone, Copy)]
pub struct TopicOrder {
    pub topics: usize,
    pub words_per_topic: usize,
    pub segments: usize,
    /// Topic words per segment, drawn uniformly from this range.
    pub seg_len: (usize, usize),
}

/// One document per topic, each with a private vocabulary, and an order cue
/// shared by all documents: segment `s` carries `s + 1` copies of `tick`.
///
/// Topic words identify which document a segment came from; the tick count
/// grows through each document, so the order of two segments from one
/// document is readable from the counts alone.
pub fn topic_order_corpus(shape: TopicOrder, seed: u64) -> String {
    let mut r = rng(seed);
    let mut text = String::new();
    for topic in 0..shape.topics {
        for s in 0..shape.segments {
            let mut words = vec!["tick".to_string(); s + 1];
            for _ in 0..r.random_range(shape.seg_len.0..=shape.seg_len.1) {
                words.push(format!("t{topic}w{}", r.random_range(0..shape.words_per_topic)));
            }
            writeln!(text, "{}", words.join(" ")).unwrap();
        }
        text.push('\n');
    }
    text
}

pub fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}
