//! Stage-wise fine-tuning: smoothed soft-target loss, AdamW, a warmup +
//! cosine learning-rate curve, the epoch loop and checkpoints.

mod checkpoint;
mod optim;
mod trainer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, file_sha256, load_checkpoint, save_checkpoint, Checkpoint, CheckpointError,
    CHECKPOINT_VERSION,
};
pub use optim::{adamw_step, AdamW, OptimizerState};
pub use trainer::{evaluate, predict, train_stage, EpochRecord, TrainHistory, TrainOutcome};

use crate::backbone::BackboneError;
use crate::data::{AugmentConfig, DataError, Split};
use crate::metrics::MetricsError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("epoch {epoch} outside [0, {total}]")]
    EpochRange { epoch: f64, total: usize },
    #[error("{0} split is empty")]
    EmptySplit(Split),
    #[error("label {0} is not 0 or 1")]
    Label(usize),
    #[error("{0}")]
    Shape(String),
    #[error(transparent)]
    Backbone(#[from] BackboneError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub weight_decay: f64,
    pub label_smoothing: f64,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub warmup_lr_init: f64,
    pub min_lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Train only the classification head. `false` trains every parameter.
    pub head_only: bool,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 1e-4,
            weight_decay: 0.05,
            label_smoothing: 0.1,
            epochs: 20,
            warmup_epochs: 5,
            warmup_lr_init: 1e-5,
            min_lr: 1e-6,
            batch_size: 32,
            seed: 0,
            head_only: true,
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.epochs == 0 || self.warmup_epochs >= self.epochs {
            return bad("need 0 <= warmup_epochs < epochs");
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad("label_smoothing must lie in [0, 1)");
        }
        if !(self.min_lr <= self.warmup_lr_init && self.warmup_lr_init <= self.base_lr) || self.min_lr < 0.0 {
            return bad("need 0 <= min_lr <= warmup_lr_init <= base_lr");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return bad("weight_decay must be non-negative");
        }
        Ok(())
    }
}

/// `(1 − ε)` on the true class plus `ε / C` everywhere.
pub fn smooth_targets(class: usize, num_classes: usize, epsilon: f64) -> Result<Vec<f64>, TrainError> {
    if class >= num_classes {
        return Err(TrainError::Label(class));
    }
    let floor = epsilon / num_classes as f64;
    let peak = 1.0 - floor * (num_classes - 1) as f64;
    Ok((0..num_classes).map(|k| if k == class { peak } else { floor }).collect())
}

/// Linear warmup from `warmup_lr_init` to `base_lr`, then a half cosine down
/// to `min_lr` at the last epoch. Both pieces are written as blends of their
/// endpoints so the endpoints come out exact.
pub fn cosine_lr(epoch: f64, cfg: &TrainConfig) -> Result<f64, TrainError> {
    let total = cfg.epochs;
    if !(0.0..=total as f64).contains(&epoch) {
        return Err(TrainError::EpochRange { epoch, total });
    }
    let warmup = cfg.warmup_epochs as f64;
    if epoch < warmup {
        let t = epoch / warmup;
        return Ok(cfg.warmup_lr_init * (1.0 - t) + cfg.base_lr * t);
    }
    let progress = (epoch - warmup) / (total as f64 - warmup);
    let w = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
    Ok(cfg.min_lr * (1.0 - w) + cfg.base_lr * w)
}
