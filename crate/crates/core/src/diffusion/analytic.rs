//! Closed-form noise predictors for data with known distribution.

use super::sampler::{NoiseModel, ReturnModel};
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Exact noise predictor for data with independent coordinates
/// `z0[j] ~ N(mean[j], var[j])`. At level `k` the noisy coordinate is
/// `N(sqrt(abar) m, abar v + 1 - abar)` and
/// `E[eps | z] = sqrt(1 - abar) (z - sqrt(abar) m) / (abar v + 1 - abar)`.
///
/// A point mass is the `var = 0` case.
#[derive(Debug, Clone)]
pub struct GaussianNoise {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl GaussianNoise {
    pub fn new(mean: Vec<f64>, var: Vec<f64>, schedule: &NoiseSchedule) -> Result<Self> {
        if mean.len() != var.len() || mean.is_empty() {
            return Err(Error::domain("mean and variance must be nonempty and the same length"));
        }
        if var.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::domain("variances must be finite and >= 0"));
        }
        Ok(GaussianNoise {
            mean,
            var,
            alpha_bar: schedule.alpha_bar.clone(),
        })
    }
}

impl NoiseModel for GaussianNoise {
    fn predict_noise(&self, z: &Tensor, k: &[usize]) -> Result<Tensor> {
        if z.cols() != self.mean.len() || z.rows() != k.len() {
            return Err(Error::Shape {
                op: "GaussianNoise",
                left: z.shape().to_vec(),
                right: vec![k.len(), self.mean.len()],
            });
        }
        let mut out = z.clone();
        for (r, &level) in k.iter().enumerate() {
            let ab = *self
                .alpha_bar
                .get(level)
                .ok_or_else(|| Error::domain(format!("level {level} outside the schedule")))?;
            for ((o, m), v) in out.row_mut(r).iter_mut().zip(&self.mean).zip(&self.var) {
                *o = (1.0 - ab).sqrt() * (*o - ab.sqrt() * m) / (ab * v + 1.0 - ab);
            }
        }
        Ok(out)
    }
}

/// A return model with zero gradient everywhere.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoGuidance;

impl ReturnModel for NoGuidance {
    fn value_and_grad(&self, z: &Tensor, _k: &[usize]) -> Result<(Vec<f64>, Tensor)> {
        Ok((vec![0.0; z.rows()], Tensor::zeros(z.shape())))
    }
}
