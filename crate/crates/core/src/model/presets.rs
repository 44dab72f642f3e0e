//! Named model configurations for `params` and quick experiments.

use super::config::{ModelConfig, SharingStrategy};
use crate::error::{Error, Result};

fn base(sharing: SharingStrategy, embedding: usize) -> ModelConfig {
    ModelConfig {
        sharing,
        ..ModelConfig::albert(12, 768, embedding)
    }
}

/// Every preset name, in display order.
pub const PRESET_NAMES: [&str; 23] = [
    "bert-base",
    "bert-large",
    "bert-xlarge",
    "albert-base",
    "albert-large",
    "albert-xlarge",
    "albert-xxlarge",
    "albert-base-e64",
    "albert-base-e128",
    "albert-base-e256",
    "albert-base-e768",
    "albert-base-noshare-e64",
    "albert-base-noshare-e128",
    "albert-base-noshare-e256",
    "albert-base-noshare-e768",
    "albert-base-shared-attention-e768",
    "albert-base-shared-ffn-e768",
    "albert-base-shared-attention-e128",
    "albert-base-shared-ffn-e128",
    "albert-large-noshare",
    "albert-xxlarge-24",
    "albert-tiny",
    "bert-tiny",
];

pub fn preset(name: &str) -> Result<ModelConfig> {
    use SharingStrategy::*;
    let cfg = match name {
        "bert-base" => ModelConfig::bert(12, 768),
        "bert-large" => ModelConfig::bert(24, 1024),
        "bert-xlarge" => ModelConfig::bert(24, 2048),
        "albert-base" => ModelConfig::albert(12, 768, 128),
        "albert-large" => ModelConfig::albert(24, 1024, 128),
        "albert-xlarge" => ModelConfig::albert(24, 2048, 128),
        "albert-xxlarge" => ModelConfig::albert(12, 4096, 128),
        "albert-xxlarge-24" => ModelConfig::albert(24, 4096, 128),
        "albert-large-noshare" => ModelConfig {
            sharing: None,
            ..ModelConfig::albert(24, 1024, 128)
        },
        "albert-tiny" => ModelConfig::tiny(64),
        "bert-tiny" => ModelConfig {
            embedding_size: 16,
            sharing: None,
            objective: super::Objective::MlmNsp,
            ..ModelConfig::tiny(64)
        },
        other => {
            let Some(rest) = other.strip_prefix("albert-base-") else {
                return Err(unknown(other));
            };
            let (sharing, e) = match rest.rsplit_once('-') {
                Some(("noshare", e)) => (None, e),
                Some(("shared-attention", e)) => (AttentionOnly, e),
                Some(("shared-ffn", e)) => (FfnOnly, e),
                Option::None => (All, rest),
                _ => return Err(unknown(other)),
            };
            let e: usize = e
                .strip_prefix('e')
                .and_then(|x| x.parse().ok())
                .ok_or_else(|| unknown(other))?;
            base(sharing, e)
        }
    };
    cfg.validate()
}

fn unknown(name: &str) -> Error {
    Error::Config(format!(
        "unknown preset '{name}'; known presets: {}",
        PRESET_NAMES.join(", ")
    ))
}
