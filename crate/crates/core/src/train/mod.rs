//! Loss assembly, optimizer, learning-rate schedule and the training loop.

mod adam;
mod eval;
mod trainer;

pub use adam::Adam;
pub use eval::{evaluate, EvalReport};
pub use trainer::{batch_loss, train, LossParts, BEST_CHECKPOINT, FINAL_CHECKPOINT, EpochMetrics, StepLog, TrainOutput, TrainOutputs};

use std::f64::consts::PI;

use crate::bayes::PredictMode;
use crate::checkpoint::CheckpointDtype;
use crate::error::{Error, Result};
use crate::params::ParamGroup;
use crate::tensor::Tensor;

/// Mixing weight and KL divisor of the composite loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub alpha: f64,
    pub kl_scale: f64,
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("loss.alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !(self.kl_scale > 0.0 && self.kl_scale.is_finite()) {
            return Err(Error::Config(format!("loss.kl_scale must be positive, got {}", self.kl_scale)));
        }
        Ok(())
    }
}

/// `α·(CE + KL/s) + (1 − α)·CE`, evaluated in the simplified form
/// `CE + α·KL/s`. Without a KL term this is plain cross-entropy.
pub fn composite_loss(logits: &Tensor, label: usize, kl: Option<&Tensor>, cfg: &LossConfig) -> Result<Tensor> {
    let ce = logits.cross_entropy(label)?;
    match kl {
        Some(kl) => ce.add(&kl.scale(cfg.alpha / cfg.kl_scale)),
        None => Ok(ce),
    }
}

/// Cosine annealing from `base` at `t = 0` to `min` at `t = horizon`;
/// later epochs stay at `min`.
pub fn cosine_lr(t: usize, horizon: usize, base: f64, min: f64) -> f64 {
    if t >= horizon {
        return min;
    }
    let w = 0.5 * (1.0 + (PI * t as f64 / horizon as f64).cos());
    base * w + min * (1.0 - w)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// 0 writes the initialized model without training.
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_backbone: f64,
    pub lr_head: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm limit; 0 disables clipping.
    pub grad_clip: f64,
    pub workers: usize,
    /// Parameter-name prefixes excluded from updates.
    pub freeze: Vec<String>,
    pub alpha: f64,
    /// `None` uses the training-set size.
    pub kl_scale: Option<f64>,
    /// Whether the KL term is computed at all.
    pub kl_enabled: bool,
    /// Weight of the fusion-entropy bonus (positive favours even weights).
    pub entropy_reg: f64,
    /// Sample Bayesian head weights during training; otherwise use means.
    pub sample_head: bool,
    pub predict: PredictMode,
    pub checkpoint_dtype: CheckpointDtype,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 8,
            lr_backbone: 1e-5,
            lr_head: 1e-4,
            lr_min: 0.0,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: 5.0,
            workers: 1,
            freeze: Vec::new(),
            alpha: 0.1,
            kl_scale: None,
            kl_enabled: true,
            entropy_reg: 0.0,
            sample_head: true,
            predict: PredictMode::Mean,
            checkpoint_dtype: CheckpointDtype::F64,
        }
    }
}

impl TrainConfig {
    /// Cosine horizon: the last epoch runs at `lr_min`.
    pub fn horizon(&self) -> usize {
        self.epochs.saturating_sub(1).max(1)
    }

    pub fn lr(&self, group: ParamGroup, epoch: usize) -> f64 {
        let base = match group {
            ParamGroup::Backbone => self.lr_backbone,
            ParamGroup::Head => self.lr_head,
        };
        cosine_lr(epoch, self.horizon(), base, self.lr_min)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.workers == 0 {
            return Err(Error::Config("train.batch_size and train.workers must be ≥ 1".into()));
        }
        for (k, v) in [("train.lr_backbone", self.lr_backbone), ("train.lr_head", self.lr_head)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{k} must be positive, got {v}")));
            }
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr_backbone.min(self.lr_head)) {
            return Err(Error::Config(format!(
                "train.lr_min must lie in [0, min base rate], got {}",
                self.lr_min
            )));
        }
        for (k, v) in [("train.beta1", self.beta1), ("train.beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{k} must lie in [0, 1), got {v}")));
            }
        }
        for (k, v) in [
            ("train.eps", self.eps),
            ("train.weight_decay", self.weight_decay),
            ("train.grad_clip", self.grad_clip),
            ("fusion.entropy_reg", self.entropy_reg),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{k} must be a nonnegative number, got {v}")));
            }
        }
        LossConfig { alpha: self.alpha, kl_scale: self.kl_scale.unwrap_or(1.0) }.validate()
    }
}
