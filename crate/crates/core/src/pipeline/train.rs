//! Mini-batch training with Adam and a plateau learning-rate schedule.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bodymodel::BodyModel;
use crate::error::{Error, Result};
use crate::numerics::{adam_step, AdamConfig, AdamState, Graph, StepOutcome, Tensor};
use crate::objective::{window_loss, LossBreakdown};
use crate::synthdata::Dataset;

use super::checkpoint::Checkpoint;
use super::config::RunConfig;
use super::evaluate::{batch_frames, batch_targets, evaluate, WindowRef};
use super::model::TemporalModel;

/// Consecutive non-finite batches tolerated before training stops.
pub const MAX_NONFINITE_BATCHES: usize = 3;

/// Divides the rate by `1/factor` after `patience` epochs without improvement.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauSchedule {
    pub learning_rate: f64,
    pub patience: usize,
    pub factor: f64,
    best: Option<f64>,
    stale: usize,
}

impl PlateauSchedule {
    pub fn new(learning_rate: f64, patience: usize, factor: f64) -> Self {
        Self {
            learning_rate,
            patience,
            factor,
            best: None,
            stale: 0,
        }
    }

    /// Records one epoch's validation error; returns true when the rate was cut.
    pub fn observe(&mut self, metric: f64) -> bool {
        if self.best.is_none_or(|b| metric < b) {
            self.best = Some(metric);
            self.stale = 0;
            return false;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            self.learning_rate *= self.factor;
            self.stale = 0;
            return true;
        }
        false
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub batches: usize,
    pub skipped_batches: usize,
    pub learning_rate: f64,
    pub val_pa_mpjpe_mm: Option<f64>,
    pub val_accel_err_mm_s2: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepStatus {
    Applied,
    SkippedNonFinite,
}

/// Owns the model and optimizer state during training.
pub struct Trainer {
    pub config: RunConfig,
    pub model: TemporalModel,
    pub adam: Vec<AdamState>,
}

impl Trainer {
    pub fn new(config: &RunConfig, body: Arc<BodyModel>, mean_theta: &[f64]) -> Result<Self> {
        config.validate(&body)?;
        let model = TemporalModel::new(
            &config.temporal,
            &config.regressor,
            body,
            mean_theta,
            config.seed,
        )?;
        let o = &config.optimizer;
        let adam_cfg = AdamConfig {
            learning_rate: o.learning_rate,
            beta1: o.beta1,
            beta2: o.beta2,
            epsilon: o.epsilon,
        };
        let adam = model
            .params
            .tensors()
            .iter()
            .map(|t| AdamState::for_param(t, adam_cfg))
            .collect();
        Ok(Self {
            config: config.clone(),
            model,
            adam,
        })
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        for s in &mut self.adam {
            s.config.learning_rate = lr;
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.adam
            .first()
            .map_or(self.config.optimizer.learning_rate, |s| {
                s.config.learning_rate
            })
    }

    /// Loss of a batch without updating anything.
    pub fn batch_loss(&self, ds: &Dataset, refs: &[WindowRef]) -> Result<LossBreakdown> {
        let mut g = Graph::new();
        let p = self.model.params.bind(&mut g, false);
        let t = self.config.temporal.window;
        let frames: Vec<_> = batch_frames(ds, refs, t)
            .into_iter()
            .map(|x| g.constant(x))
            .collect();
        let est = self
            .model
            .forward_train(&mut g, &p, &frames, self.config.loss.supervision)?;
        let targets = batch_targets(ds, refs, t);
        Ok(window_loss(&mut g, &self.model.body, &est, &targets, &self.config.loss)?.breakdown(&g))
    }

    /// One forward/backward pass and Adam update over a batch of windows.
    pub fn step(&mut self, ds: &Dataset, refs: &[WindowRef]) -> Result<(f64, StepStatus)> {
        let mut g = Graph::new();
        let p = self.model.params.bind(&mut g, true);
        let t = self.config.temporal.window;
        let frames: Vec<_> = batch_frames(ds, refs, t)
            .into_iter()
            .map(|x| g.constant(x))
            .collect();
        let est = self
            .model
            .forward_train(&mut g, &p, &frames, self.config.loss.supervision)?;
        let targets = batch_targets(ds, refs, t);
        let loss = window_loss(&mut g, &self.model.body, &est, &targets, &self.config.loss)?;
        let value = g.value(loss.total).data()[0];
        if !value.is_finite() {
            return Ok((value, StepStatus::SkippedNonFinite));
        }
        let mut grads = g.backward(loss.total)?;
        let mut fresh = Vec::with_capacity(self.adam.len());
        for (k, &v) in p.vars().iter().enumerate() {
            let shape = self.model.params.tensors()[k].shape();
            fresh.push(
                grads
                    .take(v)
                    .unwrap_or_else(|| Tensor::zeros(shape.0, shape.1)),
            );
        }
        if fresh.iter().any(|t| !t.all_finite()) {
            return Ok((value, StepStatus::SkippedNonFinite));
        }
        for ((param, grad), state) in self
            .model
            .params
            .tensors_mut()
            .iter_mut()
            .zip(&fresh)
            .zip(&mut self.adam)
        {
            if adam_step(param, grad, state)? == StepOutcome::SkippedNonFinite {
                return Err(Error::NonFinite(
                    "gradient passed the finite check but Adam rejected it".into(),
                ));
            }
        }
        Ok((value, StepStatus::Applied))
    }
}

/// Windows visited in one epoch: every `stride`-th start from a random
/// offset per sequence, shuffled.
pub fn epoch_windows(
    ds: &Dataset,
    window: usize,
    stride: usize,
    rng: &mut impl Rng,
) -> Vec<WindowRef> {
    let mut refs = Vec::new();
    for (s, m) in ds.motions.iter().enumerate() {
        if m.len() < window {
            continue;
        }
        let last = m.len() - window;
        let offset = rng.random_range(0..stride.min(last + 1));
        refs.extend(
            (offset..=last)
                .step_by(stride)
                .map(|start| WindowRef { sequence: s, start }),
        );
    }
    refs.shuffle(rng);
    refs
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Weights of the epoch with the best validation PA-MPJPE (the last epoch without validation data).
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub log: Vec<EpochLog>,
}

pub fn train(
    config: &RunConfig,
    body: Arc<BodyModel>,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
) -> Result<TrainOutcome> {
    let t = config.temporal.window;
    train_set.check_compatible(
        config.temporal.feature_dim,
        body.joint_count(),
        body.shape_dim(),
    )?;
    let mut trainer = Trainer::new(config, body, &train_set.header.mean_theta)?;
    let mut schedule = PlateauSchedule::new(
        config.optimizer.learning_rate,
        config.schedule.patience,
        config.schedule.factor,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut log = Vec::new();
    let mut best: Option<Checkpoint> = None;
    let mut best_val = None;
    let mut nonfinite_run = 0usize;
    for epoch in 0..config.optimizer.epochs {
        let refs = epoch_windows(train_set, t, config.optimizer.window_stride, &mut rng);
        let (mut loss_sum, mut batches, mut skipped) = (0.0, 0usize, 0usize);
        for chunk in refs.chunks(config.optimizer.batch_size) {
            let (loss, status) = trainer.step(train_set, chunk)?;
            match status {
                StepStatus::Applied => {
                    nonfinite_run = 0;
                    loss_sum += loss;
                    batches += 1;
                }
                StepStatus::SkippedNonFinite => {
                    skipped += 1;
                    nonfinite_run += 1;
                    log::warn!("epoch {epoch}: skipped a batch with non-finite loss or gradient");
                    if nonfinite_run >= MAX_NONFINITE_BATCHES {
                        return Err(Error::TrainingAborted(format!(
                            "{MAX_NONFINITE_BATCHES} consecutive non-finite batches in epoch {epoch}"
                        )));
                    }
                }
            }
        }
        let lr_used = trainer.learning_rate();
        let (val_pa, val_acc) = match val_set {
            Some(v) => {
                let (_, report) = evaluate(&trainer.model, v)?;
                (Some(report.pa_mpjpe_mm), Some(report.accel_err_mm_s2))
            }
            None => (None, None),
        };
        let entry = EpochLog {
            epoch,
            mean_loss: if batches > 0 {
                loss_sum / batches as f64
            } else {
                f64::NAN
            },
            batches,
            skipped_batches: skipped,
            learning_rate: lr_used,
            val_pa_mpjpe_mm: val_pa,
            val_accel_err_mm_s2: val_acc,
        };
        log::info!(
            "epoch {epoch}: loss {:.5} lr {:.2e} val PA-MPJPE {} mm",
            entry.mean_loss,
            lr_used,
            val_pa.map_or("n/a".to_string(), |v| format!("{v:.3}"))
        );
        log.push(entry);
        let improved = match val_pa {
            Some(v) => best_val.is_none_or(|b| v < b),
            None => true,
        };
        if improved {
            best_val = val_pa.or(best_val);
            best = Some(Checkpoint::from_model(
                &trainer.model,
                config,
                &trainer.adam,
                epoch + 1,
                best_val,
                lr_used,
            ));
        }
        if let Some(v) = val_pa {
            if schedule.observe(v) {
                log::info!(
                    "epoch {epoch}: learning rate reduced to {:.2e}",
                    schedule.learning_rate
                );
                trainer.set_learning_rate(schedule.learning_rate);
            }
        }
    }
    let last = Checkpoint::from_model(
        &trainer.model,
        config,
        &trainer.adam,
        config.optimizer.epochs,
        best_val,
        trainer.learning_rate(),
    );
    Ok(TrainOutcome {
        best: best.unwrap_or_else(|| last.clone()),
        last,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_curve_cuts_every_patience_epochs() {
        let mut s = PlateauSchedule::new(1e-3, 5, 0.1);
        let mut drops = Vec::new();
        for epoch in 0..16 {
            if s.observe(50.0) {
                drops.push(epoch);
            }
        }
        assert_eq!(drops, vec![5, 10, 15]);
        assert!((s.learning_rate - 1e-6).abs() < 1e-18);
    }

    #[test]
    fn improvement_resets_patience() {
        let mut s = PlateauSchedule::new(1.0, 2, 0.5);
        assert!(!s.observe(10.0));
        assert!(!s.observe(11.0));
        assert!(!s.observe(9.0));
        assert!(!s.observe(9.5));
        assert!(s.observe(9.5));
        assert_eq!(s.learning_rate, 0.5);
    }
}
