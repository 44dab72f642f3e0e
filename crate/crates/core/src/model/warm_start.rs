use std::collections::BTreeMap;

use super::config::{resolve_layer_groups, LayerGroups, ModelConfig};
use super::params::{paths, ParameterStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Initializes a (usually deeper) model from a trained one.
///
/// Embeddings and heads are copied. Each target layer `i` takes the encoder
/// parameters of source layer `i mod source_layers`; for shared strategies
/// this reduces to copying the shared groups unchanged.
pub fn warm_start_expand(
    source: &ParameterStore,
    source_cfg: &ModelConfig,
    target_cfg: &ModelConfig,
) -> Result<ParameterStore> {
    let src = source_cfg.clone().validate()?;
    let dst = target_cfg.clone().validate()?;
    let checks: [(&str, usize, usize); 6] = [
        ("hidden_size", src.hidden_size, dst.hidden_size),
        ("embedding_size", src.embedding_size, dst.embedding_size),
        ("vocab_size", src.vocab_size, dst.vocab_size),
        ("num_heads", src.num_heads(), dst.num_heads()),
        ("ffn_size", src.ffn_size(), dst.ffn_size()),
        ("max_positions", src.max_positions(), dst.max_positions()),
    ];
    for (field, a, b) in checks {
        if a != b {
            return Err(Error::Config(format!(
                "warm start: {field} differs (source {a}, target {b})"
            )));
        }
    }
    if src.factorized() != dst.factorized() {
        return Err(Error::Config(
            "warm start: factorize_embedding differs".into(),
        ));
    }
    if dst.num_layers < src.num_layers {
        return Err(Error::Config(format!(
            "warm start: target has {} layers, fewer than source {}",
            dst.num_layers, src.num_layers
        )));
    }

    let groups = resolve_layer_groups(dst.sharing, dst.num_layers, dst.group_size())?;
    let mut tensors: BTreeMap<String, Tensor> = source
        .iter()
        .filter(|(p, _)| !p.starts_with("encoder."))
        .map(|(p, t)| (p.to_string(), t.clone()))
        .collect();

    copy_groups(
        source,
        &groups.attention_group_of,
        |l| source.attention_group_of(l % src.num_layers),
        &paths::ATTENTION_PARAMS,
        paths::attention,
        &mut tensors,
    )?;
    copy_groups(
        source,
        &groups.ffn_group_of,
        |l| source.ffn_group_of(l % src.num_layers),
        &paths::FFN_PARAMS,
        paths::ffn,
        &mut tensors,
    )?;
    Ok(ParameterStore::from_parts(tensors, groups))
}

fn copy_groups(
    source: &ParameterStore,
    target_group_of: &[usize],
    source_group_for_layer: impl Fn(usize) -> usize,
    names: &[&str],
    path: fn(usize, &str) -> String,
    out: &mut BTreeMap<String, Tensor>,
) -> Result<()> {
    let n_groups = target_group_of.iter().max().map_or(0, |m| m + 1);
    for g in 0..n_groups {
        // the first layer of a group decides its source
        let layer = target_group_of
            .iter()
            .position(|&x| x == g)
            .expect("groups are dense");
        let sg = source_group_for_layer(layer);
        for name in names {
            let t = source.require(&path(sg, name))?.clone();
            out.insert(path(g, name), t);
        }
    }
    Ok(())
}

/// Rewrites a shared model as an equivalent unshared one whose every layer is
/// a copy of the group it used.
pub fn unroll_shared(
    source: &ParameterStore,
    cfg: &ModelConfig,
) -> Result<(ModelConfig, ParameterStore)> {
    let mut unrolled = cfg.clone();
    unrolled.sharing = super::SharingStrategy::None;
    unrolled.group_size = None;
    let store = warm_start_expand(source, cfg, &unrolled)?;
    Ok((unrolled.validate()?, store))
}

/// Layer groups of a config, for callers that only have the config.
pub fn groups_of(cfg: &ModelConfig) -> Result<LayerGroups> {
    resolve_layer_groups(cfg.sharing, cfg.num_layers, cfg.group_size())
}
