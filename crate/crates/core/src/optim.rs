//! Adam with step-count learning-rate decay, mini-batching and the epoch
//! training loop.

use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::features::{AugmentConfig, SequenceSample, Window};
use crate::nn::{mse_loss, network_backward, network_forward_features, Gradients, Mode, Network, Params, TENSOR_NAMES};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamHyper {
    pub lr0: f64,
    pub decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self { lr0: 1e-3, decay: 1e-6, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamHyper {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr0 > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid Adam hyperparameters: {self:?}")))
        }
    }

    /// `lr0 / (1 + decay * t)`
    pub fn learning_rate(&self, t: u64) -> f64 {
        self.lr0 / (1.0 + self.decay * t as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Params,
    pub v: Params,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &Params) -> Self {
        let zeros = Gradients::zeros_like(params).0;
        Self { m: zeros.clone(), v: zeros, t: 0 }
    }
}

/// One bias-corrected Adam update with the decayed rate at the new step count.
pub fn adam_step(net: &mut Network, grads: &Gradients, state: &mut AdamState, hyper: &AdamHyper) -> Result<()> {
    let lr = hyper.learning_rate(state.t + 1);
    adam_step_with_lr(net, grads, state, hyper, lr)
}

/// Adam update with an explicit learning rate; `state.t` still increments.
pub fn adam_step_with_lr(
    net: &mut Network,
    grads: &Gradients,
    state: &mut AdamState,
    hyper: &AdamHyper,
    lr: f64,
) -> Result<()> {
    if !net.params.same_shape(grads) || !net.params.same_shape(&state.m) {
        return Err(Error::ShapeMismatch("gradients or optimizer state do not match the network".into()));
    }
    for (name, g) in TENSOR_NAMES.iter().zip(grads.tensors()) {
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient(name.to_string()));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (hyper.beta1, hyper.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let params = net.params.tensors_mut();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for (((p, g), m), v) in params.into_iter().zip(grads.tensors()).zip(ms).zip(vs) {
        for j in 0..p.len() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            p[j] -= lr * m_hat / (v_hat.sqrt() + hyper.eps);
        }
    }
    Ok(())
}

/// A seeded permutation of `0..sample_count` cut into batches.
pub fn make_batches(sample_count: usize, batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..sample_count).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Whether learning-rate decay counts optimizer steps or epochs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecaySchedule {
    #[default]
    PerStep,
    PerEpoch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub shuffle: bool,
    pub decay_schedule: DecaySchedule,
    pub window: Window,
    /// Shift augmentation of training cells; `None` trains on genuine windows only.
    pub augmentation: Option<AugmentConfig>,
    /// Targets are divided by this before training.
    pub target_scale: f64,
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            epochs: 500,
            seed: 0,
            shuffle: true,
            decay_schedule: DecaySchedule::PerStep,
            window: Window::default(),
            augmentation: None,
            target_scale: 1000.0,
            execution: Execution::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.target_scale.is_finite() && self.target_scale > 0.0) {
            return Err(Error::InvalidConfig("target_scale must be positive".into()));
        }
        if self.window.start > self.window.terminal {
            return Err(Error::InvalidConfig("window start is after its terminal cycle".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean squared error on scaled targets over the epoch's samples.
    pub mean_loss: f64,
    /// Learning rate of the epoch's last update.
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.mean_loss)
    }

    /// `epoch,mean_loss,lr` rows preceded by the header.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "epoch,mean_loss,lr")?;
        for e in &self.epochs {
            writeln!(out, "{},{},{}", e.epoch, e.mean_loss, e.lr)?;
        }
        Ok(())
    }
}

/// Gradient of the batch-mean squared error, summed over samples in index
/// order, plus each sample's prediction.
pub fn batch_gradient(
    net: &Network,
    samples: &[&SequenceSample],
    targets: &[f64],
    rng_seeds: &[u64],
    execution: Execution,
) -> Result<(Gradients, Vec<f64>)> {
    let n = samples.len();
    let per_sample = execution.try_map(n, |j| -> Result<(f64, Gradients)> {
        let mut r = rng::seeded(rng_seeds[j]);
        let (pred, cache) = network_forward_features(net, &samples[j].features, Mode::Train(&mut r))?;
        let (_, d) = mse_loss(&[pred], &[targets[j]])?;
        let g = network_backward(net, &cache.expect("train mode returns a cache"), d[0] / n as f64)?;
        Ok((pred, g))
    })?;
    let mut iter = per_sample.into_iter();
    let (p0, mut total) = iter.next().ok_or(Error::EmptyInput)?;
    let mut preds = vec![p0];
    for (p, g) in iter {
        total.add_assign(&g);
        preds.push(p);
    }
    Ok((total, preds))
}

/// Mini-batch training on pre-scaled features. Fully deterministic given the
/// network and `config.seed`, independent of the execution mode.
pub fn train(
    mut net: Network,
    samples: &[SequenceSample],
    config: &TrainConfig,
    hyper: &AdamHyper,
) -> Result<(Network, TrainHistory)> {
    config.validate()?;
    hyper.validate()?;
    let mut history = TrainHistory::default();
    if config.epochs == 0 {
        return Ok((net, history));
    }
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    let width = net.arch.input_size;
    if let Some(bad) = samples.iter().find(|s| s.width() != width) {
        return Err(Error::ShapeMismatch(format!("sample {} has width {}, network expects {width}", bad.cell_id, bad.width())));
    }
    let targets: Vec<f64> = samples.iter().map(|s| s.target / config.target_scale).collect();
    let mut state = AdamState::new(&net.params);

    for epoch in 0..config.epochs {
        let mut order_rng = rng::seeded(rng::derive_seed(config.seed, &[0, epoch as u64]));
        let batches = if config.shuffle {
            make_batches(samples.len(), config.batch_size, &mut order_rng)
        } else {
            (0..samples.len()).collect::<Vec<_>>().chunks(config.batch_size).map(<[usize]>::to_vec).collect()
        };
        let mut sq_sum = 0.0;
        let mut lr = 0.0;
        for (b, batch) in batches.iter().enumerate() {
            let batch_samples: Vec<&SequenceSample> = batch.iter().map(|&i| &samples[i]).collect();
            let batch_targets: Vec<f64> = batch.iter().map(|&i| targets[i]).collect();
            let seeds: Vec<u64> = batch
                .iter()
                .map(|&i| rng::derive_seed(config.seed, &[1, epoch as u64, i as u64]))
                .collect();
            let (grads, preds) = batch_gradient(&net, &batch_samples, &batch_targets, &seeds, config.execution)?;
            let (loss, _) = mse_loss(&preds, &batch_targets)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            sq_sum += loss * batch.len() as f64;
            lr = match config.decay_schedule {
                DecaySchedule::PerStep => hyper.learning_rate(state.t + 1),
                DecaySchedule::PerEpoch => hyper.learning_rate(epoch as u64 + 1),
            };
            adam_step_with_lr(&mut net, &grads, &mut state, hyper, lr)?;
        }
        history.epochs.push(EpochRecord { epoch, mean_loss: sq_sum / samples.len() as f64, lr });
    }
    Ok((net, history))
}
