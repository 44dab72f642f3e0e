use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParameterStore;
use crate::tensor::{l2_norm, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LambConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Bounds applied to the trust ratio. Setting both to 1 turns LAMB into
    /// Adam with decoupled weight decay.
    pub trust_clip_min: f64,
    pub trust_clip_max: f64,
    /// Skip weight decay on layer-norm parameters and biases.
    pub exclude_norm_bias_from_decay: bool,
    /// Use a trust ratio of 1 for layer-norm parameters and biases.
    pub exclude_norm_bias_from_adaptation: bool,
}

impl Default for LambConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-6,
            weight_decay: 0.01,
            trust_clip_min: 0.0,
            trust_clip_max: 10.0,
            exclude_norm_bias_from_decay: false,
            exclude_norm_bias_from_adaptation: false,
        }
    }
}

impl LambConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..1.0).contains(&x);
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::Config(format!(
                "betas must lie in [0, 1), got {} and {}",
                self.beta1, self.beta2
            )));
        }
        if self.eps < 0.0 || self.weight_decay < 0.0 {
            return Err(Error::Config("eps and weight_decay must be >= 0".into()));
        }
        if !(self.trust_clip_min >= 0.0 && self.trust_clip_min <= self.trust_clip_max) {
            return Err(Error::Config(format!(
                "trust ratio clip [{}, {}] is empty",
                self.trust_clip_min, self.trust_clip_max
            )));
        }
        Ok(())
    }
}

pub fn is_norm_or_bias(path: &str) -> bool {
    path.ends_with(".bias") || path.ends_with("_bias") || path.contains(".ln.")
}

/// Step counter and moment estimates, as stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Moments {
    pub step: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: LambConfig,
    pub moments: Moments,
}

impl OptimizerState {
    pub fn new(config: LambConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            moments: Moments::default(),
        })
    }

    pub fn restore(config: LambConfig, moments: Moments) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, moments })
    }

    pub fn step(&self) -> u64 {
        self.moments.step
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepStats {
    pub grad_norm: f64,
    pub min_trust_ratio: f64,
    pub max_trust_ratio: f64,
}

/// One LAMB update of every parameter that requires grad.
///
/// Gradients are checked before anything is touched, so a non-finite
/// gradient leaves parameters and moments exactly as they were.
pub fn lamb_step(store: &mut ParameterStore, state: &mut OptimizerState, lr: f64) -> Result<StepStats> {
    let mut sq = 0.0;
    for (path, t) in store.iter() {
        if let Some(g) = t.grad() {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of '{path}'")));
            }
            sq += g.iter().map(|x| x * x).sum::<f64>();
        }
    }

    let cfg = state.config;
    let moments = &mut state.moments;
    moments.step += 1;
    let t = moments.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let mut stats = StepStats {
        grad_norm: sq.sqrt(),
        min_trust_ratio: f64::INFINITY,
        max_trust_ratio: 0.0,
    };

    for (path, param) in store.iter_mut() {
        if !param.requires_grad() {
            continue;
        }
        let n = param.numel();
        let shape = param.shape().to_vec();
        let m = moments
            .m
            .entry(path.to_string())
            .or_insert_with(|| Tensor::zeros(&shape));
        let v = moments
            .v
            .entry(path.to_string())
            .or_insert_with(|| Tensor::zeros(&shape));
        if m.numel() != n || v.numel() != n {
            return Err(Error::dim("lamb_step", &shape, m.shape()));
        }
        let zeros;
        let g = match param.grad() {
            Some(g) => g,
            None => {
                zeros = vec![0.0; n];
                &zeros
            }
        };
        let special = is_norm_or_bias(path);
        let wd = if cfg.exclude_norm_bias_from_decay && special {
            0.0
        } else {
            cfg.weight_decay
        };
        let w = param.data();
        let mut update = vec![0.0; n];
        {
            let (md, vd) = (m.data_mut(), v.data_mut());
            for i in 0..n {
                md[i] = cfg.beta1 * md[i] + (1.0 - cfg.beta1) * g[i];
                vd[i] = cfg.beta2 * vd[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let m_hat = md[i] / bc1;
                let v_hat = vd[i] / bc2;
                update[i] = m_hat / (v_hat.sqrt() + cfg.eps) + wd * w[i];
            }
        }
        let ratio = if cfg.exclude_norm_bias_from_adaptation && special {
            1.0
        } else {
            trust_ratio(l2_norm(w), l2_norm(&update), &cfg)
        };
        stats.min_trust_ratio = stats.min_trust_ratio.min(ratio);
        stats.max_trust_ratio = stats.max_trust_ratio.max(ratio);
        let scale = lr * ratio;
        for (x, u) in param.data_mut().iter_mut().zip(&update) {
            *x -= scale * u;
        }
    }
    if stats.min_trust_ratio == f64::INFINITY {
        stats.min_trust_ratio = 0.0;
    }
    Ok(stats)
}

fn trust_ratio(w_norm: f64, u_norm: f64, cfg: &LambConfig) -> f64 {
    let r = if w_norm == 0.0 || u_norm == 0.0 {
        1.0
    } else {
        w_norm / u_norm
    };
    r.clamp(cfg.trust_clip_min, cfg.trust_clip_max)
}
