use super::sampler::forward_noise;
use super::schedule::NoiseSchedule;
use crate::dataset::{DatasetStats, TrajectoryWindow};
use crate::error::{Error, Result};
use crate::models::{BoundParams, ModelBundle, OBS_DIM};
use crate::tensor::{Tape, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Standardized training tensors for a set of windows.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    pub horizon: usize,
    /// `[x | xbar]` rows, one per window.
    pub z0: Tensor,
    /// Normalized returns.
    pub y: Vec<f64>,
    /// `[o_t | o_t+1]` rows, `H - 1` per window.
    pub pairs: Tensor,
    /// Standardized action that produced each pair.
    pub actions: Vec<f64>,
}

impl TrainBatch {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Rows `idx` of this batch (pairs follow their windows).
    pub fn gather(&self, idx: &[usize]) -> TrainBatch {
        let d = self.z0.cols();
        let per = self.horizon - 1;
        let mut z0 = Vec::with_capacity(idx.len() * d);
        let mut pairs = Vec::with_capacity(idx.len() * per * 2 * OBS_DIM);
        let mut actions = Vec::with_capacity(idx.len() * per);
        for &i in idx {
            z0.extend_from_slice(self.z0.row(i));
            for j in 0..per {
                pairs.extend_from_slice(self.pairs.row(i * per + j));
                actions.push(self.actions[i * per + j]);
            }
        }
        TrainBatch {
            horizon: self.horizon,
            z0: Tensor::matrix(idx.len(), d, z0).expect("gather z0"),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            pairs: Tensor::matrix(idx.len() * per, 2 * OBS_DIM, pairs).expect("gather pairs"),
            actions,
        }
    }
}

/// Standardizes windows into training tensors. Without mean field the
/// second half of every row repeats the agent's own (standardized) sequence.
pub fn prepare_batch(windows: &[TrajectoryWindow], stats: &DatasetStats, mean_field: bool) -> Result<TrainBatch> {
    let h = windows.first().map_or(0, TrajectoryWindow::horizon);
    if h < 2 {
        return Err(Error::domain("windows must be nonempty with horizon >= 2"));
    }
    let d = 2 * h * OBS_DIM;
    let mut z0 = Vec::with_capacity(windows.len() * d);
    let mut pairs = Vec::with_capacity(windows.len() * (h - 1) * 2 * OBS_DIM);
    let mut actions = Vec::with_capacity(windows.len() * (h - 1));
    for w in windows {
        if w.horizon() != h || w.xbar0.len() != h || w.actions.len() != h {
            return Err(Error::domain(format!("window at t={} has inconsistent horizon", w.start)));
        }
        let own: Vec<[f64; 4]> = w.x0.iter().map(|o| stats.standardize_obs(o)).collect();
        for o in &own {
            z0.extend_from_slice(o);
        }
        if mean_field {
            for o in &w.xbar0 {
                z0.extend_from_slice(&stats.standardize_mf(o));
            }
        } else {
            for o in &own {
                z0.extend_from_slice(o);
            }
        }
        for j in 0..h - 1 {
            pairs.extend_from_slice(&own[j]);
            pairs.extend_from_slice(&own[j + 1]);
            actions.push(stats.standardize_action(w.actions[j]));
        }
    }
    Ok(TrainBatch {
        horizon: h,
        z0: Tensor::matrix(windows.len(), d, z0)?,
        y: windows.iter().map(|w| stats.normalize_return(w.y)).collect(),
        pairs: Tensor::matrix(windows.len() * (h - 1), 2 * OBS_DIM, pairs)?,
        actions,
    })
}

/// The three predictors of the joint loss, evaluated on a tape.
pub trait JointModel {
    fn noise_on_tape(&self, tape: &mut Tape, z: Var, k: &[usize]) -> Result<Var>;
    fn return_on_tape(&self, tape: &mut Tape, z: Var, k: &[usize]) -> Result<Var>;
    fn action_on_tape(&self, tape: &mut Tape, pairs: Var) -> Result<Var>;
}

/// A bundle whose parameters are registered on the tape being recorded.
pub struct BoundBundle<'a> {
    pub model: &'a ModelBundle,
    pub params: BoundParams,
}

impl<'a> BoundBundle<'a> {
    pub fn new(model: &'a ModelBundle, tape: &mut Tape) -> Self {
        BoundBundle {
            model,
            params: model.bind(tape),
        }
    }

    /// Parameter leaves in the same order as [`ModelBundle::params`].
    pub fn vars(&self) -> Vec<Var> {
        self.params
            .denoiser
            .iter()
            .chain(&self.params.classifier)
            .chain(&self.params.inverse)
            .copied()
            .collect()
    }
}

impl JointModel for BoundBundle<'_> {
    fn noise_on_tape(&self, tape: &mut Tape, z: Var, k: &[usize]) -> Result<Var> {
        self.model.check_levels(k)?;
        let t = tape.leaf(self.model.embed(k));
        self.model.denoiser.forward(tape, &self.params.denoiser, z, t)
    }

    fn return_on_tape(&self, tape: &mut Tape, z: Var, k: &[usize]) -> Result<Var> {
        self.model.check_levels(k)?;
        let t = tape.leaf(self.model.embed(k));
        self.model.classifier.forward(tape, &self.params.classifier, z, t)
    }

    fn action_on_tape(&self, tape: &mut Tape, pairs: Var) -> Result<Var> {
        self.model.inverse.forward(tape, &self.params.inverse, pairs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub inverse: f64,
    pub diffusion: f64,
    pub classifier: f64,
}

/// Joint loss with explicit noise levels and noise:
/// `MSE(a, f(o, o')) + MSE(eps, eps(z_k)) + MSE(y, J(z_k))`.
pub fn training_loss_with(
    tape: &mut Tape,
    model: &dyn JointModel,
    batch: &TrainBatch,
    schedule: &NoiseSchedule,
    k: &[usize],
    eps: &Tensor,
) -> Result<(Var, LossBreakdown)> {
    if batch.is_empty() {
        return Err(Error::domain("empty training batch"));
    }
    let zk = forward_noise(schedule, &batch.z0, k, eps)?;
    let zk = tape.leaf(zk);
    let eps_v = tape.leaf(eps.clone());
    let y = tape.leaf(Tensor::matrix(batch.len(), 1, batch.y.clone())?);
    let pairs = tape.leaf(batch.pairs.clone());
    let a = tape.leaf(Tensor::matrix(batch.actions.len(), 1, batch.actions.clone())?);

    let a_hat = model.action_on_tape(tape, pairs)?;
    let l_inv = tape.mse(a, a_hat)?;
    let eps_hat = model.noise_on_tape(tape, zk, k)?;
    let l_diff = tape.mse(eps_v, eps_hat)?;
    let y_hat = model.return_on_tape(tape, zk, k)?;
    let l_cls = tape.mse(y, y_hat)?;
    let s = tape.add(l_inv, l_diff)?;
    let total = tape.add(s, l_cls)?;
    let breakdown = LossBreakdown {
        total: tape.value(total).item()?,
        inverse: tape.value(l_inv).item()?,
        diffusion: tape.value(l_diff).item()?,
        classifier: tape.value(l_cls).item()?,
    };
    Ok((total, breakdown))
}

/// Joint loss with `k ~ U{1..K}` and standard normal noise per sample.
pub fn training_loss<R: Rng + ?Sized>(
    tape: &mut Tape,
    model: &dyn JointModel,
    batch: &TrainBatch,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<(Var, LossBreakdown)> {
    let k: Vec<usize> = (0..batch.len()).map(|_| rng.random_range(1..=schedule.steps())).collect();
    let eps = Tensor::new(
        batch.z0.shape().to_vec(),
        (0..batch.z0.len()).map(|_| Distribution::<f64>::sample(&StandardNormal, rng)).collect(),
    )?;
    training_loss_with(tape, model, batch, schedule, &k, &eps)
}
