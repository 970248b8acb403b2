//! Joint minibatch training of the three networks with Adam.

use crate::diffusion::{training_loss, training_loss_with, BoundBundle, LossBreakdown, NoiseSchedule, TrainBatch};
use crate::error::{Error, Result};
use crate::models::ModelBundle;
use crate::rng::{stream_rng, Stream};
use crate::tensor::{AdamConfig, AdamState, Tape, Tensor};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            steps_per_epoch: 1000,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be >= 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("train.lr", "must be positive and finite"));
        }
        Ok(())
    }
}

/// Mean loss components of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: LossBreakdown,
}

/// One Adam step on a fixed minibatch; returns the loss before the update.
pub fn train_step<R: Rng + ?Sized>(
    model: &mut ModelBundle,
    adam: &mut AdamState,
    batch: &TrainBatch,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let (root, parts, vars) = {
        let bound = BoundBundle::new(model, &mut tape);
        let (root, parts) = training_loss(&mut tape, &bound, batch, schedule, rng)?;
        (root, parts, bound.vars())
    };
    if !parts.total.is_finite() {
        return Err(Error::domain(format!("training loss diverged: {parts:?}")));
    }
    let mut grads = tape.backward(root)?;
    let grads: Vec<Tensor> = vars
        .iter()
        .zip(model.params())
        .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    adam.step(&mut model.params_mut(), &grads)?;
    Ok(parts)
}

/// Loss on `batch` with noise levels and noise drawn once from `seed`, so
/// repeated calls on different parameters are directly comparable.
pub fn fixed_noise_loss(
    model: &ModelBundle,
    batch: &TrainBatch,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<LossBreakdown> {
    let mut rng = stream_rng(seed, Stream::Training);
    let k: Vec<usize> = (0..batch.len()).map(|_| rng.random_range(1..=schedule.steps())).collect();
    let eps = Tensor::new(
        batch.z0.shape().to_vec(),
        (0..batch.z0.len()).map(|_| Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect(),
    )?;
    let mut tape = Tape::new();
    let bound = BoundBundle::new(model, &mut tape);
    Ok(training_loss_with(&mut tape, &bound, batch, schedule, &k, &eps)?.1)
}

/// Trains on minibatches drawn with replacement from `data`. `on_epoch`
/// sees every epoch's mean losses as soon as it finishes.
pub fn train(
    model: &mut ModelBundle,
    data: &TrainBatch,
    schedule: &NoiseSchedule,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::domain("no training windows"));
    }
    if schedule.steps() != model.config.diffusion_steps {
        return Err(Error::config(
            "model.diffusion_steps",
            format!("model has {} levels, schedule has {}", model.config.diffusion_steps, schedule.steps()),
        ));
    }
    let mut rng = stream_rng(config.seed, Stream::Training);
    let mut adam = AdamState::new(
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
        model.params(),
    );
    let mut logs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut sum = LossBreakdown::default();
        for _ in 0..config.steps_per_epoch {
            let idx: Vec<usize> = (0..config.batch_size).map(|_| rng.random_range(0..data.len())).collect();
            let parts = train_step(model, &mut adam, &data.gather(&idx), schedule, &mut rng)?;
            sum.total += parts.total;
            sum.inverse += parts.inverse;
            sum.diffusion += parts.diffusion;
            sum.classifier += parts.classifier;
        }
        let n = config.steps_per_epoch.max(1) as f64;
        let log = EpochLog {
            epoch,
            loss: LossBreakdown {
                total: sum.total / n,
                inverse: sum.inverse / n,
                diffusion: sum.diffusion / n,
                classifier: sum.classifier / n,
            },
        };
        on_epoch(&log);
        logs.push(log);
    }
    Ok(logs)
}
