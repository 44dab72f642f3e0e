use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{resolve_layer_groups, LayerGroups, ModelConfig, INIT_STDDEV};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Canonical parameter paths.
pub mod paths {
    pub const TOKEN: &str = "embeddings.token";
    pub const POSITION: &str = "embeddings.position";
    pub const SEGMENT: &str = "embeddings.segment";
    pub const EMB_LN_GAMMA: &str = "embeddings.ln.gamma";
    pub const EMB_LN_BETA: &str = "embeddings.ln.beta";
    pub const PROJECTION_W: &str = "embeddings.projection.weight";
    pub const PROJECTION_B: &str = "embeddings.projection.bias";
    pub const POOLER_W: &str = "pooler.weight";
    pub const POOLER_B: &str = "pooler.bias";
    pub const MLM_TRANSFORM_W: &str = "heads.mlm.transform.weight";
    pub const MLM_TRANSFORM_B: &str = "heads.mlm.transform.bias";
    pub const MLM_LN_GAMMA: &str = "heads.mlm.ln.gamma";
    pub const MLM_LN_BETA: &str = "heads.mlm.ln.beta";
    pub const MLM_OUTPUT_B: &str = "heads.mlm.output_bias";
    pub const SP_W: &str = "heads.sp.weight";
    pub const SP_B: &str = "heads.sp.bias";

    pub const ATTENTION_PARAMS: [&str; 10] = [
        "q.weight", "q.bias", "k.weight", "k.bias", "v.weight", "v.bias", "o.weight", "o.bias",
        "ln.gamma", "ln.beta",
    ];
    pub const FFN_PARAMS: [&str; 6] = [
        "intermediate.weight",
        "intermediate.bias",
        "output.weight",
        "output.bias",
        "ln.gamma",
        "ln.beta",
    ];

    pub fn attention(group: usize, name: &str) -> String {
        format!("encoder.attention.group{group}.{name}")
    }

    pub fn ffn(group: usize, name: &str) -> String {
        format!("encoder.ffn.group{group}.{name}")
    }
}

/// Named parameter tensors plus the layer-to-group resolution.
///
/// Shared layers reference one group, so a shared tensor exists exactly once
/// and receives the summed gradient of every layer that uses it.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore {
    tensors: BTreeMap<String, Tensor>,
    groups: LayerGroups,
}

impl ParameterStore {
    pub fn from_parts(tensors: BTreeMap<String, Tensor>, groups: LayerGroups) -> Self {
        Self { tensors, groups }
    }

    pub fn groups(&self) -> &LayerGroups {
        &self.groups
    }

    pub fn attention_group_of(&self, layer: usize) -> usize {
        self.groups.attention_group_of[layer]
    }

    pub fn ffn_group_of(&self, layer: usize) -> usize {
        self.groups.ffn_group_of[layer]
    }

    pub fn get(&self, path: &str) -> Option<&Tensor> {
        self.tensors.get(path)
    }

    pub fn get_mut(&mut self, path: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(path)
    }

    pub fn require(&self, path: &str) -> Result<&Tensor> {
        self.tensors
            .get(path)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter '{path}'")))
    }

    pub fn contains(&self, path: &str) -> bool {
        self.tensors.contains_key(path)
    }

    pub fn insert(&mut self, path: String, t: Tensor) {
        self.tensors.insert(path, t);
    }

    /// Parameters in deterministic (lexicographic path) order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn zero_grads(&mut self) {
        self.tensors.values_mut().for_each(Tensor::zero_grad);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Path, shape and initializer of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub path: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

/// The tensor inventory of a validated config, in allocation order.
pub fn parameter_specs(cfg: &ModelConfig, groups: &LayerGroups) -> Vec<ParamSpec> {
    let (h, e, v, f) = (
        cfg.hidden_size,
        cfg.embedding_size,
        cfg.vocab_size,
        cfg.ffn_size(),
    );
    let mut specs = Vec::new();
    let mut add = |path: String, shape: &[usize], init: Init| {
        specs.push(ParamSpec {
            path,
            shape: shape.to_vec(),
            init,
        })
    };
    use Init::*;
    add(paths::TOKEN.into(), &[v, e], Normal);
    add(paths::POSITION.into(), &[cfg.max_positions(), e], Normal);
    add(paths::SEGMENT.into(), &[2, e], Normal);
    add(paths::EMB_LN_GAMMA.into(), &[e], Ones);
    add(paths::EMB_LN_BETA.into(), &[e], Zeros);
    if cfg.factorized() {
        add(paths::PROJECTION_W.into(), &[e, h], Normal);
        add(paths::PROJECTION_B.into(), &[h], Zeros);
    }
    for g in 0..groups.attention_groups() {
        for name in ["q", "k", "v", "o"] {
            add(paths::attention(g, &format!("{name}.weight")), &[h, h], Normal);
            add(paths::attention(g, &format!("{name}.bias")), &[h], Zeros);
        }
        add(paths::attention(g, "ln.gamma"), &[h], Ones);
        add(paths::attention(g, "ln.beta"), &[h], Zeros);
    }
    for g in 0..groups.ffn_groups() {
        add(paths::ffn(g, "intermediate.weight"), &[h, f], Normal);
        add(paths::ffn(g, "intermediate.bias"), &[f], Zeros);
        add(paths::ffn(g, "output.weight"), &[f, h], Normal);
        add(paths::ffn(g, "output.bias"), &[h], Zeros);
        add(paths::ffn(g, "ln.gamma"), &[h], Ones);
        add(paths::ffn(g, "ln.beta"), &[h], Zeros);
    }
    add(paths::POOLER_W.into(), &[h, h], Normal);
    add(paths::POOLER_B.into(), &[h], Zeros);
    add(paths::MLM_TRANSFORM_W.into(), &[h, e], Normal);
    add(paths::MLM_TRANSFORM_B.into(), &[e], Zeros);
    add(paths::MLM_LN_GAMMA.into(), &[e], Ones);
    add(paths::MLM_LN_BETA.into(), &[e], Zeros);
    add(paths::MLM_OUTPUT_B.into(), &[v], Zeros);
    add(paths::SP_W.into(), &[h, 2], Normal);
    add(paths::SP_B.into(), &[2], Zeros);
    specs
}

/// Allocates and initializes every parameter of `cfg`.
///
/// Weights are truncated normal (stddev 0.02), biases zero, layer-norm gain
/// one. Allocation order is fixed, so the same seed yields the same store.
pub fn build_model(cfg: &ModelConfig, seed: u64) -> Result<ParameterStore> {
    let cfg = cfg.clone().validate()?;
    let groups = resolve_layer_groups(cfg.sharing, cfg.num_layers, cfg.group_size())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensors = BTreeMap::new();
    for spec in parameter_specs(&cfg, &groups) {
        let t = match spec.init {
            Init::Normal => Tensor::truncated_normal(&spec.shape, INIT_STDDEV, &mut rng),
            Init::Zeros => Tensor::zeros(&spec.shape),
            Init::Ones => Tensor::full(&spec.shape, 1.0),
        };
        let prev = tensors.insert(spec.path, t.with_grad());
        debug_assert!(prev.is_none(), "duplicate parameter path");
    }
    Ok(ParameterStore { tensors, groups })
}

/// Closed-form parameter inventory.
///
/// ```text
/// embeddings    = V*E + P*E + 2*E + 2*E            (tables + layer norm, width E)
///               + [E*H + H]                        (projection, when factorized)
/// attention     = 4*(H*H + H) + 2*H                (Q, K, V, O + layer norm)
/// ffn           = H*F + F + F*H + H + 2*H          (two maps + layer norm)
/// encoder       = N_att * attention + N_ffn * ffn
/// heads         = H*H + H                          (pooler)
///               + H*E + E + 2*E + V                (MLM transform, layer norm, output bias)
///               + 2*H + 2                          (sentence-pair classifier)
/// total         = embeddings + encoder + heads
/// ```
///
/// The MLM decoder is tied to the token embedding and contributes nothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParameterCount {
    pub embeddings: usize,
    pub attention_block: usize,
    pub ffn_block: usize,
    pub attention_groups: usize,
    pub ffn_groups: usize,
    pub encoder: usize,
    pub heads: usize,
    pub total: usize,
}

pub fn count_parameters(cfg: &ModelConfig) -> Result<ParameterCount> {
    let cfg = cfg.clone().validate()?;
    let groups = resolve_layer_groups(cfg.sharing, cfg.num_layers, cfg.group_size())?;
    let (h, e, v, f, p) = (
        cfg.hidden_size,
        cfg.embedding_size,
        cfg.vocab_size,
        cfg.ffn_size(),
        cfg.max_positions(),
    );
    let projection = if cfg.factorized() { e * h + h } else { 0 };
    let embeddings = v * e + p * e + 2 * e + 2 * e + projection;
    let attention_block = 4 * (h * h + h) + 2 * h;
    let ffn_block = h * f + f + f * h + h + 2 * h;
    let attention_groups = groups.attention_groups();
    let ffn_groups = groups.ffn_groups();
    let encoder = attention_groups * attention_block + ffn_groups * ffn_block;
    let heads = (h * h + h) + (h * e + e + 2 * e + v) + (2 * h + 2);
    Ok(ParameterCount {
        embeddings,
        attention_block,
        ffn_block,
        attention_groups,
        ffn_groups,
        encoder,
        heads,
        total: embeddings + encoder + heads,
    })
}
