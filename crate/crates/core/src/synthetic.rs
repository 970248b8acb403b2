//! Small synthetic datasets with known structure, for checking that the
//! training pipeline learns what it should.

use crate::dataset::{compute_return, TrajectoryWindow};
use crate::error::{Error, Result};
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

const DECAY: f64 = 0.8;
/// How each action moves the next observation.
const ACTION_GAIN: [f64; 4] = [1.0, 0.5, 0.0, -0.3];
const OBS_NOISE: f64 = 0.02;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    Distribution::<f64>::sample(&StandardNormal, rng)
}

/// Windows of a linear-Gaussian system
///
/// ```text
/// a_t     ~ N(0, 1)
/// o_t+1   = 0.8 o_t + g a_t + 0.02 w_t
/// obar_t  = 0.5 o_t + 0.1 v_t
/// r_t     = -|o_t+1|^2 / 4
/// ```
///
/// Actions are recoverable from `(o_t, o_t+1)` up to the small observation
/// noise, so a well-fit inverse model reaches `R^2` close to one.
pub fn linear_gaussian_windows(n: usize, horizon: usize, gamma: f64, seed: u64) -> Result<Vec<TrajectoryWindow>> {
    if horizon < 2 {
        return Err(Error::domain("horizon must be >= 2"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut o: [f64; 4] = std::array::from_fn(|_| normal(&mut rng));
            let mut x0 = Vec::with_capacity(horizon);
            let mut xbar0 = Vec::with_capacity(horizon);
            let mut actions = Vec::with_capacity(horizon);
            let mut rewards = Vec::with_capacity(horizon);
            for _ in 0..horizon {
                let a = normal(&mut rng);
                let next: [f64; 4] = std::array::from_fn(|j| DECAY * o[j] + ACTION_GAIN[j] * a + OBS_NOISE * normal(&mut rng));
                x0.push(o);
                xbar0.push(std::array::from_fn(|j| 0.5 * o[j] + 0.1 * normal(&mut rng)));
                actions.push(a);
                rewards.push(-next.iter().map(|v| v * v).sum::<f64>() / 4.0);
                o = next;
            }
            Ok(TrajectoryWindow {
                start: i as u64,
                node: 0,
                x0,
                xbar0,
                actions,
                y: compute_return(&rewards, gamma)?,
                rewards,
            })
        })
        .collect()
}

/// Coefficient of determination of `pred` against `truth`.
pub fn r_squared(pred: &[f64], truth: &[f64]) -> f64 {
    assert_eq!(pred.len(), truth.len());
    let n = truth.len().max(1) as f64;
    let mean = truth.iter().sum::<f64>() / n;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    if ss_tot == 0.0 {
        if ss_res == 0.0 {
            1.0
        } else {
            f64::NEG_INFINITY
        }
    } else {
        1.0 - ss_res / ss_tot
    }
}
