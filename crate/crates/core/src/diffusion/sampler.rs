use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::models::{ModelBundle, OBS_DIM};
use crate::tensor::Tensor;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Predicts the noise in a batch of noisy rows at levels `k`.
pub trait NoiseModel {
    fn predict_noise(&self, z: &Tensor, k: &[usize]) -> Result<Tensor>;
}

/// Scores a batch of noisy rows and returns the gradients of the scores.
pub trait ReturnModel {
    fn value_and_grad(&self, z: &Tensor, k: &[usize]) -> Result<(Vec<f64>, Tensor)>;
}

impl NoiseModel for ModelBundle {
    fn predict_noise(&self, z: &Tensor, k: &[usize]) -> Result<Tensor> {
        self.denoiser_forward(z, k)
    }
}

impl ReturnModel for ModelBundle {
    fn value_and_grad(&self, z: &Tensor, k: &[usize]) -> Result<(Vec<f64>, Tensor)> {
        self.classifier_grad(z, k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampler {
    Ancestral,
    Dpm1,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GuidanceConfig {
    pub zeta: f64,
    /// Steps of the fast sampler; the ancestral sampler always uses `K`.
    pub k_sample: usize,
    pub sampler: Sampler,
    /// Bound on `|x0|` predicted inside each step, in standardized units.
    /// Without it a small noise-prediction error at the nearly pure-noise
    /// top levels is amplified by `1 / sqrt(abar)`.
    #[serde(default)]
    pub x0_clip: Option<f64>,
}

impl GuidanceConfig {
    pub fn validate(&self, steps: usize) -> Result<()> {
        if !(self.zeta >= 0.0 && self.zeta.is_finite()) {
            return Err(Error::config("guidance.zeta", "must be finite and >= 0"));
        }
        if self.k_sample < 1 || self.k_sample > steps {
            return Err(Error::config("guidance.k_sample", format!("must lie in 1..={steps}")));
        }
        if let Some(c) = self.x0_clip {
            if !(c > 0.0) {
                return Err(Error::config("guidance.x0_clip", "must be > 0"));
            }
        }
        Ok(())
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// `sqrt(abar_k) z0 + sqrt(1 - abar_k) eps`, row `r` at level `k[r]`.
pub fn forward_noise(schedule: &NoiseSchedule, z0: &Tensor, k: &[usize], eps: &Tensor) -> Result<Tensor> {
    same_shape("forward_noise", z0, eps)?;
    if z0.rows() != k.len() {
        return Err(Error::Shape {
            op: "forward_noise",
            left: z0.shape().to_vec(),
            right: vec![k.len()],
        });
    }
    let mut out = z0.clone();
    for (r, &level) in k.iter().enumerate() {
        schedule.check_level(level)?;
        let ab = schedule.alpha_bar[level];
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        for (o, e) in out.row_mut(r).iter_mut().zip(eps.row(r)) {
            *o = a * *o + b * e;
        }
    }
    Ok(out)
}

/// Overwrites the first observation of both halves of every row with the
/// conditioning rows `[o | obar]`.
pub fn apply_conditioning(z: &mut Tensor, cond: &Tensor, horizon: usize) {
    let half = horizon * OBS_DIM;
    for r in 0..z.rows() {
        let c = cond.row(r).to_vec();
        let row = z.row_mut(r);
        row[..OBS_DIM].copy_from_slice(&c[..OBS_DIM]);
        row[half..half + OBS_DIM].copy_from_slice(&c[OBS_DIM..2 * OBS_DIM]);
    }
}

fn standard_normal_rows(rows: usize, cols: usize, rngs: &mut [ChaCha8Rng]) -> Tensor {
    let mut data = Vec::with_capacity(rows * cols);
    for rng in rngs.iter_mut().take(rows) {
        data.extend((0..cols).map(|_| Distribution::<f64>::sample(&StandardNormal, rng)));
    }
    Tensor::matrix(rows, cols, data).expect("noise shape")
}

/// One guided ancestral step from level `k` to `k - 1`:
///
/// `mu = (z - beta_k / sqrt(1 - abar_k) eps(z)) / sqrt(alpha_k) + zeta sigma2_k grad J(z)`
///
/// followed by `mu + sqrt(sigma2_k) n` for `k > 1`. Row `r` draws its noise
/// from `rngs[r]`. With `zeta == 0` the return model is never called.
#[allow(clippy::too_many_arguments)]
pub fn denoise_step(
    schedule: &NoiseSchedule,
    z: &Tensor,
    k: usize,
    noise_model: &dyn NoiseModel,
    guide: &dyn ReturnModel,
    zeta: f64,
    rngs: &mut [ChaCha8Rng],
) -> Result<Tensor> {
    denoise_step_clipped(schedule, z, k, noise_model, guide, zeta, None, rngs)
}

/// [`denoise_step`] with the predicted `x0 = (z - sqrt(1 - abar) eps) / sqrt(abar)`
/// clipped to `[-c, c]`. The mean is then the posterior mean given the
/// clipped `x0`, which equals the unclipped formula whenever nothing is
/// clipped.
#[allow(clippy::too_many_arguments)]
pub fn denoise_step_clipped(
    schedule: &NoiseSchedule,
    z: &Tensor,
    k: usize,
    noise_model: &dyn NoiseModel,
    guide: &dyn ReturnModel,
    zeta: f64,
    x0_clip: Option<f64>,
    rngs: &mut [ChaCha8Rng],
) -> Result<Tensor> {
    schedule.check_level(k)?;
    let rows = z.rows();
    if rngs.len() < rows {
        return Err(Error::domain(format!("{} random streams for {rows} rows", rngs.len())));
    }
    let levels = vec![k; rows];
    let eps = noise_model.predict_noise(z, &levels)?;
    same_shape("denoise_step", z, &eps)?;
    let (alpha, beta, ab, s2) = (schedule.alpha[k], schedule.beta[k], schedule.alpha_bar[k], schedule.sigma2[k]);
    let c_eps = beta / (1.0 - ab).sqrt();
    let inv_sqrt_alpha = 1.0 / alpha.sqrt();
    let mut mu = z.clone();
    match x0_clip {
        None => {
            for (m, e) in mu.data_mut().iter_mut().zip(eps.data()) {
                *m = (*m - c_eps * e) * inv_sqrt_alpha;
            }
        }
        Some(c) => {
            let ab_prev = schedule.alpha_bar[k - 1];
            let c_x0 = ab_prev.sqrt() * beta / (1.0 - ab);
            let c_z = alpha.sqrt() * (1.0 - ab_prev) / (1.0 - ab);
            let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
            for (m, e) in mu.data_mut().iter_mut().zip(eps.data()) {
                let x0 = ((*m - sn * e) / sa).clamp(-c, c);
                *m = c_x0 * x0 + c_z * *m;
            }
        }
    }
    if zeta != 0.0 {
        let (_, grad) = guide.value_and_grad(z, &levels)?;
        same_shape("denoise_step guidance", z, &grad)?;
        for (m, g) in mu.data_mut().iter_mut().zip(grad.data()) {
            *m += zeta * s2 * g;
        }
    }
    if k > 1 {
        let n = standard_normal_rows(rows, z.cols(), rngs);
        let sd = s2.sqrt();
        for (m, v) in mu.data_mut().iter_mut().zip(n.data()) {
            *m += sd * v;
        }
    }
    Ok(mu)
}

/// Full guided ancestral sampling from pure noise, re-imposing the
/// conditioning observations before the first and after every step.
/// With [`Sampler::Dpm1`] this delegates to [`dpm1_sample`].
#[allow(clippy::too_many_arguments)]
pub fn sample_plan(
    schedule: &NoiseSchedule,
    cond: &Tensor,
    horizon: usize,
    noise_model: &dyn NoiseModel,
    guide: &dyn ReturnModel,
    guidance: &GuidanceConfig,
    rngs: &mut [ChaCha8Rng],
) -> Result<Tensor> {
    guidance.validate(schedule.steps())?;
    if cond.cols() != 2 * OBS_DIM || rngs.len() < cond.rows() {
        return Err(Error::Shape {
            op: "sample_plan",
            left: cond.shape().to_vec(),
            right: vec![rngs.len(), 2 * OBS_DIM],
        });
    }
    if guidance.sampler == Sampler::Dpm1 {
        return dpm1_sample(schedule, cond, horizon, noise_model, guide, guidance, rngs);
    }
    let mut z = standard_normal_rows(cond.rows(), 2 * horizon * OBS_DIM, rngs);
    apply_conditioning(&mut z, cond, horizon);
    for k in (1..=schedule.steps()).rev() {
        z = denoise_step_clipped(schedule, &z, k, noise_model, guide, guidance.zeta, guidance.x0_clip, rngs)?;
        apply_conditioning(&mut z, cond, horizon);
    }
    Ok(z)
}

/// `k_sample` strictly decreasing levels from `K`, evenly spaced in the
/// level index. The sampler steps from each listed level to the next and
/// from the last one to level 0.
///
/// Even spacing in `log abar` looks natural but wastes most steps where the
/// row is almost pure noise: with the clipped cosine schedule `abar_K` is
/// around `1e-9`.
pub fn dpm1_grid(schedule: &NoiseSchedule, k_sample: usize) -> Result<Vec<usize>> {
    let steps = schedule.steps();
    if k_sample < 1 || k_sample > steps {
        return Err(Error::domain(format!("k_sample {k_sample} outside 1..={steps}")));
    }
    // j K / k_sample rounded, strictly decreasing since k_sample <= K.
    Ok((0..k_sample)
        .map(|j| steps - (j * steps + k_sample / 2) / k_sample)
        .collect())
}

/// Deterministic first-order solver on the [`dpm1_grid`] levels. Guidance
/// enters through the noise estimate,
/// `eps~ = eps - zeta sqrt(1 - abar) grad J`.
#[allow(clippy::too_many_arguments)]
pub fn dpm1_sample(
    schedule: &NoiseSchedule,
    cond: &Tensor,
    horizon: usize,
    noise_model: &dyn NoiseModel,
    guide: &dyn ReturnModel,
    guidance: &GuidanceConfig,
    rngs: &mut [ChaCha8Rng],
) -> Result<Tensor> {
    let grid = dpm1_grid(schedule, guidance.k_sample)?;
    let rows = cond.rows();
    let mut z = standard_normal_rows(rows, 2 * horizon * OBS_DIM, rngs);
    apply_conditioning(&mut z, cond, horizon);
    for (j, &t) in grid.iter().enumerate() {
        let s = grid.get(j + 1).copied().unwrap_or(0);
        let levels = vec![t; rows];
        let mut eps = noise_model.predict_noise(&z, &levels)?;
        same_shape("dpm1_sample", &z, &eps)?;
        let (ab_t, ab_s) = (schedule.alpha_bar[t], schedule.alpha_bar[s]);
        if guidance.zeta != 0.0 {
            let (_, grad) = guide.value_and_grad(&z, &levels)?;
            let c = guidance.zeta * (1.0 - ab_t).sqrt();
            for (e, g) in eps.data_mut().iter_mut().zip(grad.data()) {
                *e -= c * g;
            }
        }
        let (st, nt) = (ab_t.sqrt(), (1.0 - ab_t).sqrt());
        let (ss, ns) = (ab_s.sqrt(), (1.0 - ab_s).sqrt());
        let clip = guidance.x0_clip.unwrap_or(f64::INFINITY);
        for (v, e) in z.data_mut().iter_mut().zip(eps.data()) {
            let x0 = (*v - nt * e) / st;
            if x0.abs() > clip {
                // Keep the step consistent with the clipped x0.
                let x0 = x0.clamp(-clip, clip);
                *v = ss * x0 + ns * (*v - st * x0) / nt;
            } else {
                *v = ss * x0 + ns * e;
            }
        }
        apply_conditioning(&mut z, cond, horizon);
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{make_schedule, ScheduleKind};
    use rand::{Rng, SeedableRng};
    use std::cell::Cell;

    struct Zero;
    impl NoiseModel for Zero {
        fn predict_noise(&self, z: &Tensor, _: &[usize]) -> Result<Tensor> {
            Ok(Tensor::zeros(z.shape()))
        }
    }

    /// Fixed pseudo-random outputs that depend on the input.
    struct Wiggle;
    impl NoiseModel for Wiggle {
        fn predict_noise(&self, z: &Tensor, k: &[usize]) -> Result<Tensor> {
            Ok(z.map(|v| (v * 1.3 + k[0] as f64 * 0.01).sin()))
        }
    }
    impl ReturnModel for Wiggle {
        fn value_and_grad(&self, z: &Tensor, _: &[usize]) -> Result<(Vec<f64>, Tensor)> {
            Ok((vec![0.0; z.rows()], z.map(|v| v.cos())))
        }
    }

    struct Counting(Cell<usize>);
    impl ReturnModel for Counting {
        fn value_and_grad(&self, z: &Tensor, _: &[usize]) -> Result<(Vec<f64>, Tensor)> {
            self.0.set(self.0.get() + 1);
            Ok((vec![0.0; z.rows()], Tensor::filled(z.shape(), 1.0)))
        }
    }

    fn rngs(n: usize, seed: u64) -> Vec<ChaCha8Rng> {
        (0..n).map(|i| ChaCha8Rng::seed_from_u64(seed * 100 + i as u64)).collect()
    }

    fn random(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn loose_clip_matches_the_plain_step() {
        let s = make_schedule(20, 1e-3, 0.2, ScheduleKind::Linear).unwrap();
        let z = random(3, 8, 4);
        for k in [1, 7, 20] {
            let a = denoise_step(&s, &z, k, &Wiggle, &Wiggle, 0.7, &mut rngs(3, 5)).unwrap();
            let b = denoise_step_clipped(&s, &z, k, &Wiggle, &Wiggle, 0.7, Some(1e9), &mut rngs(3, 5)).unwrap();
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-12 * (1.0 + x.abs()), "k {k}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn tight_clip_bounds_the_final_step() {
        let s = make_schedule(20, 1e-3, 0.2, ScheduleKind::Linear).unwrap();
        let z = random(3, 8, 4).map(|v| 50.0 * v);
        let out = denoise_step_clipped(&s, &z, 1, &Zero, &Wiggle, 0.0, Some(0.5), &mut rngs(3, 5)).unwrap();
        // At k = 1 the posterior mean is the clipped x0 itself.
        assert!(out.data().iter().all(|v| v.abs() <= 0.5 + 1e-12));
    }

    #[test]
    fn forward_noise_examples() {
        let s = make_schedule(10, 0.01, 0.2, ScheduleKind::Linear).unwrap();
        let eps = random(2, 16, 1);
        let zero = Tensor::zeros(&[2, 16]);
        let out = forward_noise(&s, &zero, &[3, 7], &eps).unwrap();
        for r in 0..2 {
            let k = [3, 7][r];
            for (o, e) in out.row(r).iter().zip(eps.row(r)) {
                assert!((o - (1.0 - s.alpha_bar[k]).sqrt() * e).abs() < 1e-15);
            }
        }
        let x0 = random(2, 16, 2);
        let out = forward_noise(&s, &x0, &[1, 10], &eps).unwrap();
        for r in 0..2 {
            let ab = s.alpha_bar[[1, 10][r]];
            for c in 0..16 {
                let want = ab.sqrt() * x0.row(r)[c] + (1.0 - ab).sqrt() * eps.row(r)[c];
                assert!((out.row(r)[c] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_model_step_rescales() {
        let s = make_schedule(10, 0.01, 0.2, ScheduleKind::Linear).unwrap();
        let z = random(3, 16, 3);
        let out = denoise_step(&s, &z, 1, &Zero, &Wiggle, 0.0, &mut rngs(3, 0)).unwrap();
        for (o, v) in out.data().iter().zip(z.data()) {
            assert!((o - v / s.alpha[1].sqrt()).abs() < 1e-14);
        }
    }

    #[test]
    fn step_matches_independent_formula() {
        let s = make_schedule(20, 1e-3, 0.1, ScheduleKind::Linear).unwrap();
        let z = random(2, 16, 4);
        let k = 9;
        let zeta = 1.7;
        let out = denoise_step(&s, &z, k, &Wiggle, &Wiggle, zeta, &mut rngs(2, 7)).unwrap();
        let mut noise = rngs(2, 7);
        for r in 0..2 {
            let n: Vec<f64> = (0..16).map(|_| Distribution::<f64>::sample(&StandardNormal, &mut noise[r])).collect();
            for c in 0..16 {
                let x = z.row(r)[c];
                let eps = (x * 1.3 + k as f64 * 0.01).sin();
                let mean = 1.0 / s.alpha[k].sqrt() * (x - (1.0 - s.alpha[k]) / (1.0 - s.alpha_bar[k]).sqrt() * eps)
                    + zeta * s.sigma2[k] * x.cos();
                let want = mean + s.sigma2[k].sqrt() * n[c];
                assert!((out.row(r)[c] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn guidance_off_never_calls_classifier() {
        let s = make_schedule(10, 0.01, 0.2, ScheduleKind::Linear).unwrap();
        let counter = Counting(Cell::new(0));
        let cond = random(2, 8, 5);
        for sampler in [Sampler::Ancestral, Sampler::Dpm1] {
            let g = GuidanceConfig {
                zeta: 0.0,
                k_sample: 4,
                sampler,
                x0_clip: None,
            };
            sample_plan(&s, &cond, 2, &Wiggle, &counter, &g, &mut rngs(2, 1)).unwrap();
        }
        assert_eq!(counter.0.get(), 0);
        let g = GuidanceConfig {
            zeta: 0.5,
            k_sample: 4,
            sampler: Sampler::Ancestral,
            x0_clip: None,
        };
        sample_plan(&s, &cond, 2, &Wiggle, &counter, &g, &mut rngs(2, 1)).unwrap();
        assert_eq!(counter.0.get(), 10);
    }

    #[test]
    fn plans_keep_conditioning_rows() {
        let s = make_schedule(10, 0.01, 0.2, ScheduleKind::Linear).unwrap();
        let cond = random(3, 8, 6);
        for sampler in [Sampler::Ancestral, Sampler::Dpm1] {
            let g = GuidanceConfig {
                zeta: 1.2,
                k_sample: 3,
                sampler,
                x0_clip: None,
            };
            let a = sample_plan(&s, &cond, 4, &Wiggle, &Wiggle, &g, &mut rngs(3, 1)).unwrap();
            let b = sample_plan(&s, &cond, 4, &Wiggle, &Wiggle, &g, &mut rngs(3, 2)).unwrap();
            assert_ne!(a, b);
            for r in 0..3 {
                for z in [&a, &b] {
                    assert_eq!(&z.row(r)[..4], &cond.row(r)[..4]);
                    assert_eq!(&z.row(r)[16..20], &cond.row(r)[4..8]);
                }
            }
        }
    }

    #[test]
    fn dpm1_grid_is_strictly_decreasing() {
        let s = make_schedule(100, 1e-4, 0.999, ScheduleKind::Cosine).unwrap();
        for ks in [1, 2, 5, 10, 37, 99, 100] {
            let g = dpm1_grid(&s, ks).unwrap();
            assert_eq!(g.len(), ks);
            assert_eq!(g[0], 100);
            assert!(g.windows(2).all(|w| w[1] < w[0]));
            assert!(*g.last().unwrap() >= 1);
        }
        assert_eq!(dpm1_grid(&s, 100).unwrap(), (1..=100).rev().collect::<Vec<_>>());
    }

    #[test]
    fn single_step_dpm1_is_finite() {
        let s = make_schedule(100, 1e-4, 0.999, ScheduleKind::Cosine).unwrap();
        let g = GuidanceConfig {
            zeta: 1.0,
            k_sample: 1,
            sampler: Sampler::Dpm1,
            x0_clip: None,
        };
        let out = sample_plan(&s, &random(2, 8, 9), 3, &Wiggle, &Wiggle, &g, &mut rngs(2, 3)).unwrap();
        assert!(out.is_finite());
    }
}
