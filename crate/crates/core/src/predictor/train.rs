use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{loss, LossMode, Mlp};
use crate::error::{Error, Result};

/// Anything usable as a supervised example.
pub trait Labeled {
    fn input(&self) -> &[f64];
    fn target(&self) -> &[f64];
}

impl Labeled for (Vec<f64>, Vec<f64>) {
    fn input(&self) -> &[f64] {
        &self.0
    }

    fn target(&self) -> &[f64] {
        &self.1
    }
}

/// `lr(t) = min + (base - min) * (1 + cos(pi * t / horizon)) / 2`, held at
/// `min` past the horizon.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosineSchedule {
    pub base_lr: f64,
    pub min_lr: f64,
    pub horizon: usize,
}

impl CosineSchedule {
    pub fn lr_at(&self, t: usize) -> f64 {
        if self.horizon == 0 || t >= self.horizon {
            return self.min_lr;
        }
        let progress = t as f64 / self.horizon as f64;
        self.min_lr + (self.base_lr - self.min_lr) * (1.0 + (PI * progress).cos()) / 2.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossMode,
    pub learning_rate: f64,
    pub min_lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossMode::Mse,
            learning_rate: 0.01,
            min_lr: 0.0,
            epochs: 50,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Argument("learning_rate must be positive".into()));
        }
        if !(self.min_lr >= 0.0 && self.min_lr <= self.learning_rate) {
            return Err(Error::Argument(
                "min_lr must lie in [0, learning_rate]".into(),
            ));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Argument("epochs and batch_size must be >= 1".into()));
        }
        Ok(())
    }

    /// Per-epoch schedule: epoch `e` trains at `lr_at(e)`.
    pub fn schedule(&self) -> CosineSchedule {
        CosineSchedule {
            base_lr: self.learning_rate,
            min_lr: self.min_lr,
            horizon: self.epochs,
        }
    }
}

fn check_dims<D: Labeled>(model: &Mlp, data: &[D]) -> Result<()> {
    for (i, d) in data.iter().enumerate() {
        if d.input().len() != model.input_dim() || d.target().len() != model.output_dim() {
            return Err(Error::shape(format!(
                "example {i}: ({}, {}) does not fit a {} -> {} model",
                d.input().len(),
                d.target().len(),
                model.input_dim(),
                model.output_dim()
            )));
        }
    }
    Ok(())
}

/// Mini-batch SGD with a per-epoch cosine schedule. Returns the mean training
/// loss of every epoch. Shuffling is driven by `cfg.seed` only, so equal
/// inputs give bit-identical histories.
pub fn train<D: Labeled>(model: &mut Mlp, data: &[D], cfg: &TrainConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Argument("training set is empty".into()));
    }
    check_dims(model, data)?;

    let schedule = cfg.schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = schedule.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let pairs = batch.iter().map(|&i| (data[i].input(), data[i].target()));
            let (l, grads) = model.batch_gradient(pairs, cfg.loss)?;
            if !l.is_finite() {
                return Err(Error::Divergence { epoch, loss: l });
            }
            total += l * batch.len() as f64;
            model.apply_step(&grads, lr);
        }
        let mean = total / data.len() as f64;
        if !mean.is_finite() || !model.is_finite() {
            return Err(Error::Divergence { epoch, loss: mean });
        }
        history.push(mean);
    }
    Ok(history)
}

/// Mean loss of `model` over `data`.
pub fn mean_loss<D: Labeled>(model: &Mlp, data: &[D], mode: LossMode) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Argument("dataset is empty".into()));
    }
    let mut total = 0.0;
    for d in data {
        total += loss(&model.forward(d.input())?, d.target(), mode)?;
    }
    Ok(total / data.len() as f64)
}

pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean relative error of each exit.
    pub per_exit: Vec<f64>,
    pub overall: f64,
}

/// Per-exit mean of `|pred - true| / max(true, 1e-6)`.
pub fn evaluate<D: Labeled>(model: &Mlp, data: &[D]) -> Result<EvalReport> {
    evaluate_with(data, |x| model.forward(x))
}

/// [`evaluate`] for any prediction function.
pub fn evaluate_with<D, F>(data: &[D], mut predict: F) -> Result<EvalReport>
where
    D: Labeled,
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let first = data
        .first()
        .ok_or_else(|| Error::Argument("dataset is empty".into()))?;
    let exits = first.target().len();
    let mut sums = vec![0.0; exits];
    for d in data {
        let pred = predict(d.input())?;
        if pred.len() != exits || d.target().len() != exits {
            return Err(Error::shape("inconsistent exit counts"));
        }
        for ((s, p), t) in sums.iter_mut().zip(&pred).zip(d.target()) {
            *s += (p - t).abs() / t.max(RELATIVE_ERROR_FLOOR);
        }
    }
    let n = data.len() as f64;
    let per_exit: Vec<f64> = sums.into_iter().map(|s| s / n).collect();
    let overall = per_exit.iter().sum::<f64>() / exits.max(1) as f64;
    Ok(EvalReport { per_exit, overall })
}
