use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::MaskingConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::optim::{LambConfig, Schedule};

/// Peak learning rate used when a run config does not set one.
pub const DEFAULT_LEARNING_RATE: f64 = 0.00176;

fn default_lr() -> f64 {
    DEFAULT_LEARNING_RATE
}
fn default_batch_size() -> usize {
    16
}
fn default_max_steps() -> u64 {
    2000
}
fn default_max_seq_len() -> usize {
    128
}
fn default_short_prob() -> f64 {
    0.1
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/default")
}
fn default_eval_instances() -> usize {
    512
}

/// One experiment: model, data, optimizer and bookkeeping.
///
/// Relative paths are resolved against the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub masking: MaskingConfig,
    #[serde(default)]
    pub optimizer: LambConfig,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    /// Defaults to a tenth of `max_steps`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup_steps: Option<u64>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_max_steps")]
    pub max_steps: u64,
    /// Held-out evaluation period in steps; 0 disables it.
    #[serde(default)]
    pub eval_every: u64,
    /// Checkpoint period in steps; 0 writes only the final checkpoint.
    #[serde(default)]
    pub checkpoint_every: u64,
    #[serde(default = "default_max_seq_len")]
    pub max_seq_len: usize,
    #[serde(default = "default_short_prob")]
    pub short_seq_prob: f64,
    pub corpus: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_corpus: Option<PathBuf>,
    /// Vocabulary file; built from the corpus when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<PathBuf>,
    #[serde(default = "default_eval_instances")]
    pub eval_instances: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    /// A config with every default filled in.
    pub fn new(model: ModelConfig, corpus: PathBuf, output_dir: PathBuf) -> Self {
        Self {
            model,
            masking: MaskingConfig::default(),
            optimizer: LambConfig::default(),
            learning_rate: DEFAULT_LEARNING_RATE,
            warmup_steps: None,
            batch_size: default_batch_size(),
            max_steps: default_max_steps(),
            eval_every: 0,
            checkpoint_every: 0,
            max_seq_len: default_max_seq_len(),
            short_seq_prob: default_short_prob(),
            corpus,
            eval_corpus: None,
            vocab: None,
            eval_instances: default_eval_instances(),
            output_dir,
            seed: 0,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.corpus);
        resolve(&mut cfg.output_dir);
        if let Some(p) = cfg.eval_corpus.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.vocab.as_mut() {
            resolve(p);
        }
        Ok(cfg)
    }

    pub fn warmup(&self) -> u64 {
        self.warmup_steps.unwrap_or((self.max_steps / 10).max(1))
    }

    pub fn schedule(&self) -> Result<Schedule> {
        Schedule::new(self.learning_rate, self.warmup(), self.max_steps)
    }

    /// Checks values and fills model defaults. Paths are checked separately
    /// by [`RunConfig::check_paths`].
    pub fn validate(mut self) -> Result<Self> {
        self.model = self.model.validate()?;
        self.masking.validate()?;
        self.optimizer.validate()?;
        self.schedule()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.max_seq_len > self.model.max_positions() {
            return Err(Error::Config(format!(
                "max_seq_len {} exceeds the model's {} positions",
                self.max_seq_len,
                self.model.max_positions()
            )));
        }
        if !(0.0..=1.0).contains(&self.short_seq_prob) {
            return Err(Error::Config(format!(
                "short_seq_prob {} outside [0, 1]",
                self.short_seq_prob
            )));
        }
        Ok(self)
    }

    pub fn check_paths(&self) -> Result<()> {
        let mut paths = vec![("corpus", &self.corpus)];
        if let Some(p) = &self.eval_corpus {
            paths.push(("eval_corpus", p));
        }
        if let Some(p) = &self.vocab {
            paths.push(("vocab", p));
        }
        for (field, p) in paths {
            if !p.exists() {
                return Err(Error::Config(format!(
                    "{field} path {} does not exist",
                    p.display()
                )));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the config's canonical JSON.
    pub fn digest(&self) -> String {
        digest_of(self)
    }
}

/// Hex SHA-256 of a value's JSON form.
pub fn digest_of<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("value serializes");
    hex::encode(Sha256::digest(&json))
}
