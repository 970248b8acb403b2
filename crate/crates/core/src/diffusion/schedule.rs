use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub kind: ScheduleKind,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            steps: 100,
            beta_start: 1e-4,
            beta_end: 0.999,
            kind: ScheduleKind::Cosine,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        make_schedule(self.steps, self.beta_start, self.beta_end, self.kind)
    }
}

/// Per-step coefficients, indexed `0..=K` with `beta[0] = 0` and
/// `alpha_bar[0] = 1` so that `k - 1` is always a valid index.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub config: ScheduleConfig,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
    /// Posterior variance `(1 - abar[k-1]) / (1 - abar[k]) * beta[k]`.
    pub sigma2: Vec<f64>,
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.beta.len() - 1
    }

    pub fn check_level(&self, k: usize) -> Result<()> {
        if k < 1 || k > self.steps() {
            return Err(Error::domain(format!("noise level {k} outside 1..={}", self.steps())));
        }
        Ok(())
    }
}

const COSINE_OFFSET: f64 = 0.008;

fn cosine_alpha_bar(t: f64) -> f64 {
    let f = |t: f64| ((t + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * std::f64::consts::FRAC_PI_2).cos().powi(2);
    f(t) / f(0.0)
}

pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64, kind: ScheduleKind) -> Result<NoiseSchedule> {
    if steps < 1 {
        return Err(Error::domain("schedule needs at least one step"));
    }
    if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::domain(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )));
    }
    let k = steps as f64;
    let mut beta = vec![0.0];
    match kind {
        ScheduleKind::Linear => {
            for i in 1..=steps {
                let frac = if steps == 1 { 0.0 } else { (i - 1) as f64 / (k - 1.0) };
                beta.push(beta_start + (beta_end - beta_start) * frac);
            }
        }
        ScheduleKind::Cosine => {
            for i in 1..=steps {
                let b = 1.0 - cosine_alpha_bar(i as f64 / k) / cosine_alpha_bar((i - 1) as f64 / k);
                beta.push(b.clamp(beta_start, beta_end));
            }
        }
    }
    if beta[1..].windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::domain("betas are not nondecreasing"));
    }
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = vec![1.0];
    for i in 1..=steps {
        alpha_bar.push(alpha_bar[i - 1] * alpha[i]);
    }
    let mut sigma2 = vec![0.0];
    for i in 1..=steps {
        sigma2.push((1.0 - alpha_bar[i - 1]) / (1.0 - alpha_bar[i]) * beta[i]);
    }
    Ok(NoiseSchedule {
        config: ScheduleConfig {
            steps,
            beta_start,
            beta_end,
            kind,
        },
        beta,
        alpha,
        alpha_bar,
        sigma2,
    })
}
