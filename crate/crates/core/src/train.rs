//! MSE training with validation-based early stopping, and evaluation.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataio::{DatasetSplit, MergedSegment, WindowBatch, WindowSampler};
use crate::error::{Error, Result};
use crate::metrics::{MetricsReport, SegmentMetrics};
use crate::model::{forward, forward_on_tape, receptive_field, InputScaler, ModelWeights, TapeParams};
use crate::tensor::{Adam, AdamConfig, Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch: usize,
    /// Training crop length, samples.
    pub crop_len: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// An epoch improves only if its validation loss is below
    /// `best - min_delta`.
    pub min_delta: f64,
    pub seed: u64,
    pub train_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            batch: 16,
            crop_len: 1024,
            max_epochs: 200,
            patience: 5,
            min_delta: 1e-6,
            seed: 42,
            train_fraction: 0.85,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience < 1 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.max_epochs < 1 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction must be in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.min_delta.is_nan() || self.min_delta < 0.0 {
            return Err(Error::Config("min_delta must be non-negative".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// Mean of squared differences over all elements.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.data().len() as f64;
    Ok(pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Patience counter over 1-based epoch numbers.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    min_delta: f64,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            patience,
            min_delta,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        if val_loss < self.best - self.min_delta {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.stale = 0;
            StopDecision::Improved
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    /// True when patience ran out before `max_epochs`.
    pub early_stopped: bool,
}

impl TrainHistory {
    pub fn best_val_loss(&self) -> f64 {
        self.epochs[self.best_epoch - 1].val_loss
    }

    /// `epoch,train_loss,val_loss,seconds`. Pass `with_time = false` for
    /// output that is byte-identical across runs.
    pub fn to_csv(&self, with_time: bool) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,seconds\n");
        for e in &self.epochs {
            let secs = if with_time {
                format!("{:.3}", e.seconds)
            } else {
                String::new()
            };
            let _ = writeln!(out, "{},{:.17e},{:.17e},{secs}", e.epoch, e.train_loss, e.val_loss);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights from the best validation epoch.
    pub weights: ModelWeights,
    pub history: TrainHistory,
}

/// Sample-weighted MSE of full-length predictions over `segments`,
/// accumulated in segment order.
pub fn validation_loss(weights: &ModelWeights, segments: &[MergedSegment]) -> Result<f64> {
    if segments.is_empty() {
        return Err(Error::InsufficientData("no validation segments".into()));
    }
    let mut sq = 0.0;
    let mut count = 0usize;
    for s in segments {
        let pred = forward(weights, &s.imu)?;
        sq += mse_loss(&pred, &s.target_tensor())? * s.len() as f64;
        count += s.len();
    }
    Ok(sq / count as f64)
}

/// Averages per-window gradients over the batch; returns the mean loss.
fn batch_gradients(weights: &ModelWeights, batch: &WindowBatch) -> Result<(f64, Vec<Tensor>)> {
    let mut total: Option<Vec<Tensor>> = None;
    let mut loss_sum = 0.0;
    for (x, y) in batch.inputs.iter().zip(&batch.targets) {
        let mut tape = Tape::new();
        let params = TapeParams::register(&mut tape, weights);
        let xv = tape.constant(x.clone());
        let pred = forward_on_tape(weights, &params, &mut tape, xv)?;
        let yv = tape.constant(y.clone());
        let loss = tape.mse(pred, yv)?;
        loss_sum += tape.value(loss).item()?;
        let mut grads = tape.backward(loss)?;
        let g: Vec<Tensor> = params
            .vars()
            .into_iter()
            .map(|v| {
                // The last block's residual output feeds nothing, so its
                // parameters get no gradient.
                grads.take(v).unwrap_or_else(|| {
                    let (c, t) = tape.value(v).shape();
                    Tensor::zeros(c, t)
                })
            })
            .collect();
        match total.as_mut() {
            None => total = Some(g),
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(&g) {
                    a.data_mut().iter_mut().zip(b.data()).for_each(|(p, q)| *p += q);
                }
            }
        }
    }
    let n = batch.len() as f64;
    let mut grads = total.ok_or(Error::EmptyInput("empty batch"))?;
    grads
        .iter_mut()
        .for_each(|g| g.data_mut().iter_mut().for_each(|v| *v /= n));
    Ok((loss_sum / n, grads))
}

/// Trains on `split.train` and early-stops on `split.test`. The input
/// scaler of `initial` is refitted on the training IMU channels. Returns the
/// weights of the best validation epoch.
pub fn train(initial: ModelWeights, split: &DatasetSplit, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_observer(initial, split, cfg, |_| {})
}

/// As [`train`], calling `on_epoch` after every epoch.
pub fn train_with_observer(
    initial: ModelWeights,
    split: &DatasetSplit,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if split.test.is_empty() {
        return Err(Error::InsufficientData("validation split is empty".into()));
    }
    let mut weights = initial;
    weights.scaler = InputScaler::fit(split.train.iter().map(|s| &s.imu));
    let rf = receptive_field(&weights.config).total;
    let sampler = WindowSampler::new(&split.train, cfg.crop_len, cfg.batch, cfg.seed, rf)?;
    let mut adam = Adam::new(cfg.adam());
    let mut stopper = EarlyStopping::new(cfg.patience, cfg.min_delta);
    let mut best = weights.clone();
    let mut epochs = Vec::new();
    let mut early_stopped = false;

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        let mut loss_sum = 0.0;
        let mut windows = 0usize;
        for batch in sampler.epoch(epoch) {
            let (loss, grads) = batch_gradients(&weights, &batch)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            let mut params = weights.params_mut();
            adam.step(&mut params, &grads).map_err(|e| match e {
                Error::NonFiniteGradient { param } => {
                    log::error!("non-finite gradient in `{param}` at epoch {epoch}");
                    Error::Divergence { epoch, loss: f64::NAN }
                }
                other => other,
            })?;
            loss_sum += loss * batch.len() as f64;
            windows += batch.len();
        }
        let train_loss = loss_sum / windows as f64;
        let val_loss = validation_loss(&weights, &split.test)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence { epoch, loss: val_loss });
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train {train_loss:.6e} val {val_loss:.6e} ({:.1}s)",
            record.seconds
        );
        on_epoch(&record);
        epochs.push(record);
        match stopper.observe(epoch, val_loss) {
            StopDecision::Improved => best = weights.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                early_stopped = epoch < cfg.max_epochs;
                break;
            }
        }
    }
    let stopped_epoch = epochs.len();
    Ok(TrainOutcome {
        weights: best,
        history: TrainHistory {
            epochs,
            best_epoch: stopper.best_epoch(),
            stopped_epoch,
            early_stopped,
        },
    })
}

/// Full-length prediction for every segment, then per-segment metrics.
pub fn evaluate(weights: &ModelWeights, segments: &[MergedSegment], include_dc: bool) -> Result<MetricsReport> {
    let predictions = predict_segments(weights, segments)?;
    evaluate_predictions(segments, &predictions, include_dc)
}

pub fn predict_segments(weights: &ModelWeights, segments: &[MergedSegment]) -> Result<Vec<Vec<f64>>> {
    segments
        .iter()
        .map(|s| forward(weights, &s.imu).map(Tensor::into_data))
        .collect()
}

/// Report for externally produced predictions, one per segment.
pub fn evaluate_predictions(
    segments: &[MergedSegment],
    predictions: &[Vec<f64>],
    include_dc: bool,
) -> Result<MetricsReport> {
    if segments.is_empty() {
        return Err(Error::InsufficientData("nothing to evaluate".into()));
    }
    if segments.len() != predictions.len() {
        return Err(Error::Shape(format!(
            "{} segments but {} predictions",
            segments.len(),
            predictions.len()
        )));
    }
    let rows = segments
        .iter()
        .zip(predictions)
        .map(|(s, p)| SegmentMetrics::compute(s.id(), p, &s.target, include_dc))
        .collect::<Result<Vec<_>>>()?;
    let mut motions: Vec<&str> = segments.iter().map(|s| s.meta.motion_label()).collect();
    motions.dedup();
    let label = if motions.len() == 1 { motions[0] } else { "mixed" };
    MetricsReport::from_rows(label, include_dc, rows)
}
