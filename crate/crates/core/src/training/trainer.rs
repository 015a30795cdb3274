use std::fmt;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::model::{Model, SampleGrad};
use crate::numerics::{Rng, Tensor};
use crate::training::{augment, cosine_lr, AdamW, FlipAxis, OptimizerState};

const SHUFFLE_STREAM: u64 = 0x5348_5546;
const SAMPLE_STREAM: u64 = 0x5341_4d50;

/// Optimisation and regularisation settings.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub label_smoothing: f64,
    pub noise_sigma: f64,
    pub flip_prob: f64,
    pub noise_prob: f64,
    pub flip_axis: FlipAxis,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-4,
            weight_decay: 1e-5,
            epochs: 100,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            label_smoothing: 0.1,
            noise_sigma: 0.01,
            flip_prob: 0.5,
            noise_prob: 0.5,
            flip_axis: FlipAxis::Height,
            batch_size: 8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be positive, got {}", self.lr0));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad(format!("label_smoothing must be in [0, 1), got {}", self.label_smoothing));
        }
        for (name, p) in [("flip_prob", self.flip_prob), ("noise_prob", self.noise_prob)] {
            if !unit(p) {
                return bad(format!("{name} must be in [0, 1], got {p}"));
            }
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must be in [0, 1), got {b}"));
            }
        }
        let positive = self.adam_eps > 0.0;
        let non_negative = self.weight_decay >= 0.0 && self.noise_sigma >= 0.0;
        if !positive || !non_negative {
            return bad("adam_eps must be positive; weight_decay and noise_sigma non-negative".into());
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be at least 1".into());
        }
        Ok(())
    }

    fn optimizer(&self) -> AdamW {
        AdamW {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }
}

/// Summary of one epoch; `lr` is the rate of the epoch's first step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub lr: f64,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} loss={:.6} acc={:.6} lr={:e}",
            self.epoch, self.loss, self.accuracy, self.lr
        )
    }
}

/// Mini-batch AdamW training with a per-step cosine schedule.
///
/// Per-clip gradients in a batch may be computed in parallel; they are
/// summed in batch order, so results do not depend on the thread count.
pub struct Trainer {
    config: TrainConfig,
    model: Model<f32>,
    state: OptimizerState<f32>,
    optimizer: AdamW,
    step: usize,
    total_steps: usize,
}

impl Trainer {
    /// `dataset_len` fixes the schedule length: `epochs · ⌈n/batch⌉` steps.
    pub fn new(model: Model<f32>, config: TrainConfig, dataset_len: usize) -> Result<Self> {
        config.validate()?;
        if dataset_len == 0 {
            return Err(Error::Data("training set is empty".into()));
        }
        let total_steps = config.epochs * dataset_len.div_ceil(config.batch_size);
        Ok(Self {
            state: OptimizerState::new(model.params()),
            optimizer: config.optimizer(),
            config,
            model,
            step: 0,
            total_steps,
        })
    }

    pub fn model(&self) -> &Model<f32> {
        &self.model
    }

    pub fn into_model(self) -> Model<f32> {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Optimiser steps taken so far.
    pub fn step(&self) -> usize {
        self.step
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    fn sample_grad(&self, sample: &Sample, index: usize, epoch: usize) -> Result<SampleGrad<f32>> {
        let c = &self.config;
        let stream = Rng::new(c.seed).derive2(SAMPLE_STREAM + epoch as u64, index as u64);
        let clip = augment(
            &sample.clip,
            &mut stream.derive(0),
            c.flip_prob,
            c.flip_axis,
            c.noise_prob,
            c.noise_sigma,
        );
        self.model
            .loss_and_grad(&clip, sample.label, c.label_smoothing, &stream.derive(1), true)
    }

    fn batch_grads(&self, samples: &[Sample], batch: &[usize], epoch: usize) -> Result<Vec<SampleGrad<f32>>> {
        let one = |&i: &usize| self.sample_grad(&samples[i], i, epoch);
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            batch.par_iter().map(one).collect()
        }
        #[cfg(not(feature = "parallel"))]
        batch.iter().map(one).collect()
    }

    /// Runs epoch `epoch` (1-based) over `samples`.
    pub fn run_epoch(&mut self, samples: &[Sample], epoch: usize) -> Result<EpochLog> {
        if samples.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        Rng::new(self.config.seed)
            .derive2(SHUFFLE_STREAM, epoch as u64)
            .shuffle(&mut order);
        let mut first_lr = None;
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for batch in order.chunks(self.config.batch_size) {
            let results = self.batch_grads(samples, batch, epoch)?;
            let mut sum: Vec<Tensor<f32>> = self
                .model
                .params()
                .tensors()
                .map(|t| Tensor::zeros(t.shape()))
                .collect();
            for (r, &i) in results.iter().zip(batch) {
                let loss = f64::from(r.loss);
                if !loss.is_finite() {
                    return Err(Error::NumericAbort(format!(
                        "non-finite loss {loss} at epoch {epoch}, step {}, sample {i}",
                        self.step
                    )));
                }
                loss_sum += loss;
                let logits: Vec<f64> = r.logits.iter().map(|&v| f64::from(v)).collect();
                if crate::model::predict_from_logits(&logits).class == samples[i].label {
                    correct += 1;
                }
                for (acc, g) in sum.iter_mut().zip(&r.grads) {
                    acc.add_assign(g);
                }
            }
            let inv = 1.0 / batch.len() as f32;
            for g in &mut sum {
                *g = g.scale(inv);
            }
            let lr = cosine_lr(self.step.min(self.total_steps), self.total_steps, self.config.lr0)?;
            first_lr.get_or_insert(lr);
            self.optimizer
                .step(self.model.params_mut(), &sum, &mut self.state, lr);
            self.step += 1;
            if !self.model.params().all_finite() {
                return Err(Error::NumericAbort(format!(
                    "non-finite parameters after step {} (epoch {epoch})",
                    self.step
                )));
            }
        }
        let n = samples.len() as f64;
        Ok(EpochLog {
            epoch,
            loss: loss_sum / n,
            accuracy: correct as f64 / n,
            lr: first_lr.expect("at least one batch"),
        })
    }

    /// Runs every configured epoch, calling `on_epoch` after each one.
    pub fn fit(
        &mut self,
        samples: &[Sample],
        mut on_epoch: impl FnMut(&EpochLog, &Model<f32>) -> Result<()>,
    ) -> Result<Vec<EpochLog>> {
        let mut logs = Vec::with_capacity(self.config.epochs);
        for epoch in 1..=self.config.epochs {
            let log = self.run_epoch(samples, epoch)?;
            on_epoch(&log, &self.model)?;
            logs.push(log);
        }
        Ok(logs)
    }
}

/// File name of the checkpoint written after `epoch`.
pub fn checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch}.efck")
}
