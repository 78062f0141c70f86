use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::Activation;
use super::model::{ModelConfig, ModelParams};
use crate::dataset::{Sample, WindowConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            _ => Err(format!("unknown optimizer `{s}` (expected sgd or adam)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub hidden_size: usize,
    pub conv_channels: usize,
    /// Frames per recurrent step.
    pub stride: usize,
    pub seed: u64,
    /// Maximum global gradient norm.
    pub grad_clip: f64,
    pub optimizer: OptimizerKind,
    pub conv_activation: Activation,
    /// Train the ego-only ablation (context grids zeroed).
    pub ego_only: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 16,
            epochs: 30,
            hidden_size: 64,
            conv_channels: 8,
            stride: 3,
            seed: 0,
            grad_clip: 5.0,
            optimizer: OptimizerKind::Sgd,
            conv_activation: Activation::Relu,
            ego_only: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("train.learning_rate", "must be positive"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("train.batch_size", "must be at least 1"));
        }
        if self.epochs < 1 {
            return Err(Error::config("train.epochs", "must be at least 1"));
        }
        if self.hidden_size < 1 {
            return Err(Error::config("train.hidden_size", "must be at least 1"));
        }
        if self.conv_channels < 1 {
            return Err(Error::config("train.conv_channels", "must be at least 1"));
        }
        if self.stride < 1 {
            return Err(Error::config("train.stride", "must be at least 1"));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::config("train.grad_clip", "must be positive"));
        }
        Ok(())
    }

    pub fn model_config(&self, window: &WindowConfig) -> ModelConfig {
        let mut c = ModelConfig::for_window(window, self.hidden_size, self.conv_channels, self.stride);
        c.conv_activation = self.conv_activation;
        c.use_context = !self.ego_only;
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// Equal to the training loss when no validation set is given.
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<EpochLog>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
}

/// Mean per-sample loss.
pub fn mean_loss(m: &ModelParams, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for s in samples {
        let pred = m.forward_local(s)?;
        total += super::loss(&pred, &s.future)?;
    }
    Ok(total / samples.len() as f64)
}

struct Adam {
    m: ModelParams,
    v: ModelParams,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn step(&mut self, params: &mut ModelParams, grad: &ModelParams, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        let tensors = params.tensors_mut().into_iter().zip(grad.tensors());
        for (((_, p), (_, g)), ((_, m), (_, v))) in tensors.zip(self.m.tensors_mut().into_iter().zip(self.v.tensors_mut())) {
            for k in 0..p.len() {
                m[k] = BETA1 * m[k] + (1.0 - BETA1) * g[k];
                v[k] = BETA2 * v[k] + (1.0 - BETA2) * g[k] * g[k];
                p[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + ADAM_EPS);
            }
        }
    }
}

/// Mini-batch training with global-norm clipping and a per-seed shuffle.
/// Returns the parameters of the epoch with the lowest validation loss
/// (training loss when `val` is empty).
pub fn train(train_set: &[Sample], val: &[Sample], window: &WindowConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(train_set, val, window, cfg, |_| {})
}

pub fn train_with_progress(
    train_set: &[Sample],
    val: &[Sample],
    window: &WindowConfig,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    window.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut params = ModelParams::init(cfg.model_config(window), cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut adam = (cfg.optimizer == OptimizerKind::Adam).then(|| Adam {
        m: params.zeros_like(),
        v: params.zeros_like(),
        t: 0,
    });
    let mut grad = params.zeros_like();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ModelParams)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grad.scale(0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                epoch_loss += params.accumulate_gradient(&train_set[i], scale, &mut grad)?;
            }
            let norm = grad.norm_sq().sqrt();
            if norm > cfg.grad_clip {
                grad.scale(cfg.grad_clip / norm);
            }
            match adam.as_mut() {
                Some(a) => a.step(&mut params, &grad, cfg.learning_rate),
                None => params.add_scaled(&grad, -cfg.learning_rate),
            }
        }
        if !params.is_finite() {
            return Err(Error::InvalidArgument(format!("training diverged in epoch {epoch}")));
        }
        let train_loss = epoch_loss / train_set.len() as f64;
        let val_loss = if val.is_empty() {
            train_loss
        } else {
            mean_loss(&params, val)?
        };
        let entry = EpochLog {
            epoch,
            train_loss,
            val_loss,
        };
        progress(&entry);
        log.push(entry);
        if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
            best = Some((val_loss, epoch, params.clone()));
        }
    }
    let (_, best_epoch, params) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        params,
        log,
        best_epoch,
    })
}

pub fn format_training_log(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss\n");
    for e in log {
        let _ = writeln!(out, "{},{:.6},{:.6}", e.epoch, e.train_loss, e.val_loss);
    }
    out
}

pub fn write_training_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    std::fs::write(path, format_training_log(log)).map_err(|e| Error::io(path, e))
}
