use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which encoder sub-blocks are reused across layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SharingStrategy {
    /// One attention block and one FFN block for every layer.
    All,
    AttentionOnly,
    FfnOnly,
    /// Independent parameters per layer.
    None,
    /// Contiguous blocks of `group_size` layers share both sub-blocks.
    Grouped,
}

impl SharingStrategy {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.replace('-', "_").as_str() {
            "all" | "all_shared" => Self::All,
            "attention_only" | "shared_attention" => Self::AttentionOnly,
            "ffn_only" | "shared_ffn" => Self::FfnOnly,
            "none" | "not_shared" => Self::None,
            "grouped" => Self::Grouped,
            other => return Err(Error::Config(format!("unknown sharing strategy '{other}'"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    MlmOnly,
    MlmNsp,
    MlmSop,
}

impl Objective {
    pub fn has_sentence_pair(self) -> bool {
        !matches!(self, Objective::MlmOnly)
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.replace('-', "_").as_str() {
            "mlm_only" | "mlm" | "none" => Self::MlmOnly,
            "mlm_nsp" | "nsp" => Self::MlmNsp,
            "mlm_sop" | "sop" => Self::MlmSop,
            other => return Err(Error::Config(format!("unknown objective '{other}'"))),
        })
    }
}

pub const DEFAULT_MAX_POSITIONS: usize = 512;
pub const LAYER_NORM_EPS: f64 = 1e-12;
pub const INIT_STDDEV: f64 = 0.02;

/// Architecture hyperparameters of a BERT/ALBERT encoder.
///
/// Optional fields take their defaults in [`ModelConfig::validate`]:
/// `num_heads = hidden_size / 64`, `ffn_size = 4 * hidden_size`,
/// `max_positions = 512`, and `factorize_embedding = embedding_size != hidden_size`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub hidden_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_heads: Option<usize>,
    pub embedding_size: usize,
    pub vocab_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ffn_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_positions: Option<usize>,
    pub sharing: SharingStrategy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_size: Option<usize>,
    #[serde(default)]
    pub dropout_p: f64,
    pub objective: Objective,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factorize_embedding: Option<bool>,
}

impl ModelConfig {
    /// An ALBERT-style configuration with a 30k vocabulary and
    /// all-layer sharing; adjust fields as needed.
    pub fn albert(num_layers: usize, hidden_size: usize, embedding_size: usize) -> Self {
        Self {
            num_layers,
            hidden_size,
            num_heads: None,
            embedding_size,
            vocab_size: 30_000,
            ffn_size: None,
            max_positions: None,
            sharing: SharingStrategy::All,
            group_size: None,
            dropout_p: 0.0,
            objective: Objective::MlmSop,
            factorize_embedding: None,
        }
    }

    /// BERT-style: embedding width equals hidden width, nothing shared.
    pub fn bert(num_layers: usize, hidden_size: usize) -> Self {
        Self {
            sharing: SharingStrategy::None,
            objective: Objective::MlmNsp,
            dropout_p: 0.1,
            ..Self::albert(num_layers, hidden_size, hidden_size)
        }
    }

    /// A small config for tests and desk runs.
    pub fn tiny(vocab_size: usize) -> Self {
        Self {
            num_layers: 2,
            hidden_size: 16,
            num_heads: Some(2),
            embedding_size: 8,
            vocab_size,
            ffn_size: None,
            max_positions: Some(64),
            sharing: SharingStrategy::All,
            group_size: None,
            dropout_p: 0.0,
            objective: Objective::MlmSop,
            factorize_embedding: None,
        }
    }

    pub fn num_heads(&self) -> usize {
        self.num_heads.unwrap_or(self.hidden_size / 64)
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.num_heads().max(1)
    }

    pub fn ffn_size(&self) -> usize {
        self.ffn_size.unwrap_or(4 * self.hidden_size)
    }

    pub fn max_positions(&self) -> usize {
        self.max_positions.unwrap_or(DEFAULT_MAX_POSITIONS)
    }

    pub fn group_size(&self) -> usize {
        self.group_size.unwrap_or(1)
    }

    pub fn factorized(&self) -> bool {
        self.embedding_size != self.hidden_size || self.factorize_embedding == Some(true)
    }

    /// Fills defaults and checks every structural invariant.
    pub fn validate(mut self) -> Result<Self> {
        let err = |m: String| Err(Error::Config(m));
        if self.num_layers == 0 || self.hidden_size == 0 || self.embedding_size == 0 {
            return err("num_layers, hidden_size and embedding_size must be positive".into());
        }
        if self.vocab_size < 6 {
            return err(format!(
                "vocab_size {} cannot hold the 5 special tokens plus one word",
                self.vocab_size
            ));
        }
        let heads = match self.num_heads {
            Some(0) => return err("num_heads must be positive".into()),
            Some(a) => a,
            None if self.hidden_size >= 64 => self.hidden_size / 64,
            None => {
                return err(format!(
                    "hidden_size {} < 64: num_heads defaults to H/64 = 0; set it explicitly",
                    self.hidden_size
                ))
            }
        };
        if self.hidden_size % heads != 0 {
            return err(format!(
                "hidden_size {} is not divisible by num_heads {heads}",
                self.hidden_size
            ));
        }
        self.num_heads = Some(heads);
        if self.ffn_size == Some(0) {
            return err("ffn_size must be positive".into());
        }
        self.ffn_size = Some(self.ffn_size());
        if self.max_positions == Some(0) {
            return err("max_positions must be positive".into());
        }
        self.max_positions = Some(self.max_positions());
        if self.sharing == SharingStrategy::Grouped {
            let m = self
                .group_size
                .ok_or_else(|| Error::Config("grouped sharing requires group_size".into()))?;
            if m == 0 || self.num_layers % m != 0 {
                return err(format!(
                    "num_layers {} is not divisible by group_size {m}",
                    self.num_layers
                ));
            }
        }
        if self.factorize_embedding == Some(false) && self.embedding_size > self.hidden_size {
            return err(format!(
                "embedding_size {} > hidden_size {} requires factorization",
                self.embedding_size, self.hidden_size
            ));
        }
        self.factorize_embedding = Some(self.factorized());
        if !(0.0..1.0).contains(&self.dropout_p) {
            return err(format!("dropout_p {} outside [0, 1)", self.dropout_p));
        }
        Ok(self)
    }
}

/// Layer-to-group maps for the attention and FFN sub-blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerGroups {
    pub attention_group_of: Vec<usize>,
    pub ffn_group_of: Vec<usize>,
}

impl LayerGroups {
    pub fn attention_groups(&self) -> usize {
        distinct(&self.attention_group_of)
    }

    pub fn ffn_groups(&self) -> usize {
        distinct(&self.ffn_group_of)
    }
}

fn distinct(map: &[usize]) -> usize {
    map.iter().max().map_or(0, |m| m + 1)
}

pub fn resolve_layer_groups(
    strategy: SharingStrategy,
    num_layers: usize,
    group_size: usize,
) -> Result<LayerGroups> {
    if num_layers == 0 {
        return Err(Error::Config("num_layers must be at least 1".into()));
    }
    let shared = vec![0; num_layers];
    let identity: Vec<usize> = (0..num_layers).collect();
    let (attention_group_of, ffn_group_of) = match strategy {
        SharingStrategy::All => (shared.clone(), shared),
        SharingStrategy::None => (identity.clone(), identity),
        SharingStrategy::AttentionOnly => (shared, identity),
        SharingStrategy::FfnOnly => (identity, shared),
        SharingStrategy::Grouped => {
            if group_size == 0 || num_layers % group_size != 0 {
                return Err(Error::Config(format!(
                    "num_layers {num_layers} is not divisible by group_size {group_size}"
                )));
            }
            let blocks: Vec<usize> = (0..num_layers).map(|i| i / group_size).collect();
            (blocks.clone(), blocks)
        }
    };
    Ok(LayerGroups {
        attention_group_of,
        ffn_group_of,
    })
}
