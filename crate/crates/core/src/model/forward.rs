//! Encoder forward pass, pretraining losses and gradient collection.

use std::collections::HashMap;

use rand::Rng;

use super::config::{ModelConfig, LAYER_NORM_EPS};
use super::params::{paths, ParameterStore};
use crate::data::{Batch, IGNORE_TARGET};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};

/// Large negative logit added to attention scores of padding keys.
const MASK_LOGIT: f64 = -10_000.0;

/// Graph handles of every registered parameter.
#[derive(Debug, Clone, Default)]
pub struct ParamVars(HashMap<String, Var>);

impl ParamVars {
    pub fn register(store: &ParameterStore, graph: &mut Graph) -> Self {
        Self(
            store
                .iter()
                .map(|(p, t)| (p.to_string(), graph.leaf(t)))
                .collect(),
        )
    }

    pub fn get(&self, path: &str) -> Result<Var> {
        self.0
            .get(path)
            .copied()
            .ok_or_else(|| Error::Config(format!("parameter '{path}' not in store")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Handles into the graph that produced them.
///
/// `hidden` is `[B, S, H]`, `mlm_logits` `[B, S, V]`, `sp_logits` `[B, 2]`.
/// Layer traces are `[B, S, H]` per layer and only populated when tracing.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub params: ParamVars,
    pub hidden: Var,
    pub mlm_logits: Var,
    pub sp_logits: Option<Var>,
    pub layer_inputs: Vec<Var>,
    pub layer_outputs: Vec<Var>,
}

struct Ctx<'a, R: ?Sized> {
    g: &'a mut Graph,
    p: &'a ParamVars,
    cfg: &'a ModelConfig,
    dropout: f64,
    training: bool,
    rng: &'a mut R,
}

impl<R: Rng + ?Sized> Ctx<'_, R> {
    fn linear(&mut self, x: Var, w: &str, b: &str) -> Result<Var> {
        let w = self.p.get(w)?;
        let b = self.p.get(b)?;
        let y = self.g.matmul(x, w)?;
        self.g.add_bias(y, b)
    }

    fn layer_norm(&mut self, x: Var, gamma: &str, beta: &str) -> Result<Var> {
        let gamma = self.p.get(gamma)?;
        let beta = self.p.get(beta)?;
        self.g.layer_norm(x, gamma, beta, LAYER_NORM_EPS)
    }

    fn dropout(&mut self, x: Var) -> Result<Var> {
        self.g.dropout(x, self.dropout, self.training, self.rng)
    }

    /// `[B*S, H]` -> `[B, A, S, d]`
    fn split_heads(&mut self, x: Var, b: usize, s: usize) -> Result<Var> {
        let (a, d) = (self.cfg.num_heads(), self.cfg.head_dim());
        let x = self.g.reshape(x, &[b, s, a, d])?;
        self.g.permute(x, &[0, 2, 1, 3])
    }

    fn attention(&mut self, x: Var, group: usize, mask: &[f64], b: usize, s: usize) -> Result<Var> {
        let name = |n: &str| paths::attention(group, n);
        let q = self.linear(x, &name("q.weight"), &name("q.bias"))?;
        let k = self.linear(x, &name("k.weight"), &name("k.bias"))?;
        let v = self.linear(x, &name("v.weight"), &name("v.bias"))?;
        let q = self.split_heads(q, b, s)?;
        let k = self.split_heads(k, b, s)?;
        let v = self.split_heads(v, b, s)?;

        let scores = self.g.batch_matmul(q, k, true)?;
        let scores = self.g.scale(scores, 1.0 / (self.cfg.head_dim() as f64).sqrt());
        let scores = self.g.add_const(scores, mask)?;
        let probs = self.g.softmax(scores, 3)?;
        let probs = self.dropout(probs)?;
        let ctx = self.g.batch_matmul(probs, v, false)?;
        let ctx = self.g.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = self.g.reshape(ctx, &[b * s, self.cfg.hidden_size])?;

        let out = self.linear(ctx, &name("o.weight"), &name("o.bias"))?;
        let out = self.dropout(out)?;
        let res = self.g.add(x, out)?;
        self.layer_norm(res, &name("ln.gamma"), &name("ln.beta"))
    }

    fn feed_forward(&mut self, x: Var, group: usize) -> Result<Var> {
        let name = |n: &str| paths::ffn(group, n);
        let h = self.linear(x, &name("intermediate.weight"), &name("intermediate.bias"))?;
        let h = self.g.gelu(h);
        let out = self.linear(h, &name("output.weight"), &name("output.bias"))?;
        let out = self.dropout(out)?;
        let res = self.g.add(x, out)?;
        self.layer_norm(res, &name("ln.gamma"), &name("ln.beta"))
    }
}

fn check_batch(cfg: &ModelConfig, batch: &Batch) -> Result<()> {
    let n = batch.batch_size * batch.seq_len;
    if batch.token_ids.len() != n || batch.segment_ids.len() != n || batch.padding_mask.len() != n
    {
        return Err(Error::Data("batch arrays do not match batch_size * seq_len".into()));
    }
    if batch.seq_len > cfg.max_positions() {
        return Err(Error::Data(format!(
            "sequence length {} exceeds max_positions {}",
            batch.seq_len,
            cfg.max_positions()
        )));
    }
    if let Some(&id) = batch.token_ids.iter().find(|&&id| id >= cfg.vocab_size) {
        return Err(Error::OutOfRange {
            what: "token",
            id,
            size: cfg.vocab_size,
        });
    }
    if let Some(&id) = batch.segment_ids.iter().find(|&&id| id >= 2) {
        return Err(Error::OutOfRange {
            what: "segment",
            id,
            size: 2,
        });
    }
    Ok(())
}

/// Runs the encoder and both heads on `batch`, recording into `graph`.
///
/// Embeddings are the sum of token, position and segment lookups at width E,
/// layer-normalized, then projected to H when factorized. Each of the L
/// post-norm layers uses the attention and FFN groups its index resolves to.
/// The MLM decoder reuses the token embedding table.
pub fn forward<R: Rng + ?Sized>(
    graph: &mut Graph,
    store: &ParameterStore,
    cfg: &ModelConfig,
    batch: &Batch,
    training: bool,
    trace: bool,
    rng: &mut R,
) -> Result<ForwardOutput> {
    check_batch(cfg, batch)?;
    let params = ParamVars::register(store, graph);
    let (b, s, h, v) = (
        batch.batch_size,
        batch.seq_len,
        cfg.hidden_size,
        cfg.vocab_size,
    );
    let mut cx = Ctx {
        g: graph,
        p: &params,
        cfg,
        dropout: cfg.dropout_p,
        training,
        rng,
    };

    let positions: Vec<usize> = (0..b).flat_map(|_| 0..s).collect();
    let tok = cx.g.embedding_lookup(params.get(paths::TOKEN)?, &batch.token_ids)?;
    let pos = cx.g.embedding_lookup(params.get(paths::POSITION)?, &positions)?;
    let seg = cx.g.embedding_lookup(params.get(paths::SEGMENT)?, &batch.segment_ids)?;
    let emb = cx.g.add(tok, pos)?;
    let emb = cx.g.add(emb, seg)?;
    let emb = cx.layer_norm(emb, paths::EMB_LN_GAMMA, paths::EMB_LN_BETA)?;
    let emb = cx.dropout(emb)?;
    let mut x = if cfg.factorized() {
        cx.linear(emb, paths::PROJECTION_W, paths::PROJECTION_B)?
    } else {
        emb
    };

    let a = cfg.num_heads();
    let mut mask = vec![0.0; b * a * s * s];
    for bi in 0..b {
        for j in 0..s {
            if !batch.padding_mask[bi * s + j] {
                for row in 0..a * s {
                    mask[(bi * a * s + row) * s + j] = MASK_LOGIT;
                }
            }
        }
    }

    let mut layer_inputs = Vec::new();
    let mut layer_outputs = Vec::new();
    for layer in 0..cfg.num_layers {
        let input = x;
        x = cx.attention(x, store.attention_group_of(layer), &mask, b, s)?;
        x = cx.feed_forward(x, store.ffn_group_of(layer))?;
        if trace {
            layer_inputs.push(cx.g.reshape(input, &[b, s, h])?);
            layer_outputs.push(cx.g.reshape(x, &[b, s, h])?);
        }
    }

    let t = cx.linear(x, paths::MLM_TRANSFORM_W, paths::MLM_TRANSFORM_B)?;
    let t = cx.g.gelu(t);
    let t = cx.layer_norm(t, paths::MLM_LN_GAMMA, paths::MLM_LN_BETA)?;
    let decoder = params.get(paths::TOKEN)?;
    let logits = cx.g.batch_matmul(t, decoder, true)?;
    let logits = cx.g.add_bias(logits, params.get(paths::MLM_OUTPUT_B)?)?;
    debug_assert_eq!(cx.g.shape(logits), &[b * s, v]);

    let sp_logits = if cfg.objective.has_sentence_pair() {
        let firsts: Vec<usize> = (0..b).map(|i| i * s).collect();
        let cls = cx.g.embedding_lookup(x, &firsts)?;
        let pooled = cx.linear(cls, paths::POOLER_W, paths::POOLER_B)?;
        let pooled = cx.g.tanh(pooled);
        Some(cx.linear(pooled, paths::SP_W, paths::SP_B)?)
    } else {
        None
    };

    let hidden = graph.reshape(x, &[b, s, h])?;
    let mlm_logits = graph.reshape(logits, &[b, s, v])?;
    Ok(ForwardOutput {
        params,
        hidden,
        mlm_logits,
        sp_logits,
        layer_inputs,
        layer_outputs,
    })
}

/// Loss handles and their values.
#[derive(Debug, Clone, Copy)]
pub struct Loss {
    pub total: Var,
    pub mlm: f64,
    pub sp: Option<f64>,
    pub mlm_counted: usize,
}

/// MLM cross-entropy over masked positions plus, when the objective has one,
/// the sentence-pair cross-entropy.
pub fn pretraining_loss(
    graph: &mut Graph,
    out: &ForwardOutput,
    cfg: &ModelConfig,
    batch: &Batch,
) -> Result<Loss> {
    let rows = batch.batch_size * batch.seq_len;
    let logits = graph.reshape(out.mlm_logits, &[rows, cfg.vocab_size])?;
    let mlm = graph.cross_entropy_logits(logits, &batch.mlm_targets(), IGNORE_TARGET)?;
    let mlm_value = graph.value(mlm.loss).item();
    let (total, sp) = match (out.sp_logits, &batch.sp_labels) {
        (Some(sp_logits), Some(labels)) => {
            let labels: Vec<i64> = labels.iter().map(|&l| l as i64).collect();
            let sp = graph.cross_entropy_logits(sp_logits, &labels, IGNORE_TARGET)?;
            let v = graph.value(sp.loss).item();
            (graph.add(mlm.loss, sp.loss)?, Some(v))
        }
        (Some(_), None) => {
            return Err(Error::Data(
                "objective needs sentence-pair labels but the batch has none".into(),
            ))
        }
        (None, _) => (mlm.loss, None),
    };
    Ok(Loss {
        total,
        mlm: mlm_value,
        sp,
        mlm_counted: mlm.counted,
    })
}

/// Loss values of one forward/backward episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValues {
    pub total: f64,
    pub mlm: f64,
    pub sp: Option<f64>,
}

/// Forward, backward, and gradients written into `store` (replacing any
/// previous gradient).
pub fn compute_gradients<R: Rng + ?Sized>(
    store: &mut ParameterStore,
    cfg: &ModelConfig,
    batch: &Batch,
    training: bool,
    rng: &mut R,
) -> Result<LossValues> {
    let mut graph = Graph::new();
    let out = forward(&mut graph, store, cfg, batch, training, false, rng)?;
    let loss = pretraining_loss(&mut graph, &out, cfg, batch)?;
    let total = graph.value(loss.total).item();
    if !total.is_finite() {
        return Err(Error::NonFinite(format!("loss is {total}")));
    }
    graph.backward(loss.total)?;
    store.zero_grads();
    for (path, var) in out.params.iter() {
        let grad = graph.grad(var).unwrap_or(&[]);
        if let Some(t) = store.get_mut(path) {
            if t.requires_grad() && !grad.is_empty() {
                t.accumulate_grad(grad)?;
            }
        }
    }
    Ok(LossValues {
        total,
        mlm: loss.mlm,
        sp: loss.sp,
    })
}

/// Loss value only, no gradient bookkeeping.
pub fn evaluate_loss<R: Rng + ?Sized>(
    store: &ParameterStore,
    cfg: &ModelConfig,
    batch: &Batch,
    training: bool,
    rng: &mut R,
) -> Result<LossValues> {
    let mut graph = Graph::new();
    let out = forward(&mut graph, store, cfg, batch, training, false, rng)?;
    let loss = pretraining_loss(&mut graph, &out, cfg, batch)?;
    Ok(LossValues {
        total: graph.value(loss.total).item(),
        mlm: loss.mlm,
        sp: loss.sp,
    })
}
