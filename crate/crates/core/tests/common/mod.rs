//! Oracles and fixtures shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use macdmp::dataset::{DatasetStats, TrajectoryWindow};
use macdmp::diffusion::{prepare_batch, NoiseModel, NoiseSchedule, ScheduleConfig, ScheduleKind};
use macdmp::models::{ModelBundle, ModelConfig};
use macdmp::tensor::{Tape, Tensor, Var};
use macdmp::train::{train, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    Distribution::<f64>::sample(&StandardNormal, rng)
}

pub fn random_tensor(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| scale * normal(rng)).collect()).unwrap()
}

pub fn unit_stats() -> DatasetStats {
    DatasetStats {
        obs_mean: [0.0; 4],
        obs_std: [1.0; 4],
        mf_mean: [0.0; 4],
        mf_std: [1.0; 4],
        action_mean: 0.0,
        action_std: 1.0,
        return_min: -1.0,
        return_max: 0.0,
    }
}

/// A fixed smooth trajectory, used as the only training example.
pub fn point_mass_window(horizon: usize) -> TrajectoryWindow {
    let x0: Vec<[f64; 4]> = (0..horizon)
        .map(|t| {
            let t = t as f64;
            [0.8 * (0.7 * t).sin(), 0.6 * (0.5 * t).cos(), 0.3 * t / horizon as f64 - 0.5, 0.4]
        })
        .collect();
    let xbar0 = x0.iter().map(|o| o.map(|v| 0.5 * v + 0.1)).collect();
    TrajectoryWindow {
        start: 0,
        node: 0,
        x0,
        xbar0,
        actions: vec![0.3; horizon],
        rewards: vec![-0.5; horizon],
        y: -0.5,
    }
}

pub fn point_mass_schedule() -> NoiseSchedule {
    ScheduleConfig {
        steps: 50,
        kind: ScheduleKind::Cosine,
        ..ScheduleConfig::default()
    }
    .build()
    .unwrap()
}

/// A compact model fit to the single [`point_mass_window`].
pub fn point_mass_model(horizon: usize, steps: usize) -> (ModelBundle, TrajectoryWindow) {
    let window = point_mass_window(horizon);
    let schedule = point_mass_schedule();
    let data = prepare_batch(std::slice::from_ref(&window), &unit_stats(), true).unwrap();
    let mut model = ModelBundle::new(ModelConfig::compact(horizon, schedule.steps()), unit_stats(), 4).unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        steps_per_epoch: steps,
        batch_size: 32,
        lr: 2e-3,
        seed: 4,
    };
    train(&mut model, &data, &schedule, &cfg, |_| {}).unwrap();
    (model, window)
}

/// Flattened `[x | xbar]` row of a window, in the layout the samplers use.
pub fn window_row(w: &TrajectoryWindow) -> Vec<f64> {
    w.x0.iter().chain(&w.xbar0).flatten().copied().collect()
}

/// Deterministic ancestral loop: the reverse mean without injected noise.
pub fn ancestral_mean_path(
    schedule: &NoiseSchedule,
    model: &dyn NoiseModel,
    z: &Tensor,
    clip: f64,
    fix: impl Fn(&mut Tensor),
) -> Tensor {
    let mut z = z.clone();
    fix(&mut z);
    for k in (1..=schedule.steps()).rev() {
        let eps = model.predict_noise(&z, &vec![k; z.rows()]).unwrap();
        let (ab, ab_prev, beta) = (schedule.alpha_bar[k], schedule.alpha_bar[k - 1], schedule.beta[k]);
        for (v, e) in z.data_mut().iter_mut().zip(eps.data()) {
            let x0 = ((*v - (1.0 - ab).sqrt() * e) / ab.sqrt()).clamp(-clip, clip);
            *v = ab_prev.sqrt() * beta / (1.0 - ab) * x0 + schedule.alpha[k].sqrt() * (1.0 - ab_prev) / (1.0 - ab) * *v;
        }
        fix(&mut z);
    }
    z
}

pub fn rms(v: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = v.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x * x, n + 1));
    (s / n.max(1) as f64).sqrt()
}

/// Which network a gradient check exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Net {
    Denoiser,
    Classifier,
    Inverse,
}

pub const NETS: [Net; 3] = [Net::Denoiser, Net::Classifier, Net::Inverse];

/// Small model with every parameter redrawn, so that no layer sits at its
/// zero initialization.
pub fn randomized_model(seed: u64) -> ModelBundle {
    let cfg = ModelConfig {
        width: 12,
        denoiser_blocks: 2,
        classifier_blocks: 1,
        inverse_width: 10,
        temb_dim: 8,
        ..ModelConfig::compact(3, 20)
    };
    let mut model = ModelBundle::new(cfg, unit_stats(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for p in model.params_mut() {
        for v in p.data_mut() {
            *v = 0.4 * normal(&mut rng);
        }
    }
    model
}

/// `sum(w * net(x))` for fixed weights `w`, built on a fresh tape.
fn weighted_output(model: &ModelBundle, net: Net, x: &Tensor, k: &[usize], w: &Tensor) -> (Tape, Var, Vec<Var>, Var) {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let xv = tape.leaf(x.clone());
    let (out, params) = match net {
        Net::Denoiser => {
            let temb = tape.leaf(model.embed(k));
            (model.denoiser.forward(&mut tape, &bound.denoiser, xv, temb).unwrap(), bound.denoiser)
        }
        Net::Classifier => {
            let temb = tape.leaf(model.embed(k));
            (model.classifier.forward(&mut tape, &bound.classifier, xv, temb).unwrap(), bound.classifier)
        }
        Net::Inverse => (model.inverse.forward(&mut tape, &bound.inverse, xv).unwrap(), bound.inverse),
    };
    let wv = tape.leaf(w.clone());
    let prod = tape.mul(out, wv).unwrap();
    let n = prod_len(&tape, prod);
    let m = tape.mean(prod);
    let loss = tape.scale(m, n as f64);
    (tape, loss, params, xv)
}

fn prod_len(tape: &Tape, v: Var) -> usize {
    tape.value(v).len()
}

fn param_tensors(model: &mut ModelBundle, net: Net) -> &mut Vec<Tensor> {
    match net {
        Net::Denoiser => &mut model.denoiser.params.tensors,
        Net::Classifier => &mut model.classifier.params.tensors,
        Net::Inverse => &mut model.inverse.params.tensors,
    }
}

/// Relative error `|g_a - g_n| / max(|g_a|, |g_n|)` between the tape
/// gradient and central differences, over every parameter and input entry
/// of one network at one random point.
pub fn gradient_rel_error(net: Net, seed: u64) -> f64 {
    let mut model = randomized_model(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(7));
    let rows = 3;
    let (cols, out_cols) = match net {
        Net::Denoiser => (model.config.traj_dim(), model.config.traj_dim()),
        Net::Classifier => (model.config.traj_dim(), 1),
        Net::Inverse => (8, 1),
    };
    let x = random_tensor(rows, cols, 1.0, &mut rng);
    let k: Vec<usize> = (0..rows).map(|_| rng.random_range(1..=20)).collect();
    let w = random_tensor(rows, out_cols, 1.0, &mut rng);

    let (tape, loss, params, xv) = weighted_output(&model, net, &x, &k, &w);
    let grads = tape.backward(loss).unwrap();
    let mut analytic = Vec::new();
    for (p, t) in params.iter().zip(param_tensors(&mut model, net).iter()) {
        analytic.extend_from_slice(grads.get_or_zeros(*p, t.shape()).data());
    }
    analytic.extend_from_slice(grads.get_or_zeros(xv, x.shape()).data());

    let h = 1e-5;
    let eval = |m: &ModelBundle, x: &Tensor| {
        let (t, l, _, _) = weighted_output(m, net, x, &k, &w);
        t.value(l).item().unwrap()
    };
    let mut numeric = Vec::with_capacity(analytic.len());
    let n_params = param_tensors(&mut model, net).len();
    for pi in 0..n_params {
        let len = param_tensors(&mut model, net)[pi].len();
        for j in 0..len {
            let orig = param_tensors(&mut model, net)[pi].data()[j];
            param_tensors(&mut model, net)[pi].data_mut()[j] = orig + h;
            let up = eval(&model, &x);
            param_tensors(&mut model, net)[pi].data_mut()[j] = orig - h;
            let down = eval(&model, &x);
            param_tensors(&mut model, net)[pi].data_mut()[j] = orig;
            numeric.push((up - down) / (2.0 * h));
        }
    }
    for j in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[j] += h;
        let mut xm = x.clone();
        xm.data_mut()[j] -= h;
        numeric.push((eval(&model, &xp) - eval(&model, &xm)) / (2.0 * h));
    }
    assert_eq!(analytic.len(), numeric.len());
    let diff = rms(analytic.iter().zip(&numeric).map(|(a, b)| a - b));
    diff / rms(analytic.iter().copied()).max(rms(numeric.iter().copied()))
}

/// Draws `n` samples of a 1-D Gaussian with ancestral sampling driven by the
/// exact noise predictor, returning the sample mean and variance.
pub fn gaussian_sampler_moments(mean: f64, var: f64, steps: usize, n: usize, seed: u64) -> (f64, f64) {
    use macdmp::diffusion::{denoise_step, GaussianNoise, NoGuidance};
    use macdmp::rng::{stream_rng, Stream};
    let schedule = macdmp::diffusion::make_schedule(steps, 1e-4, 0.02, ScheduleKind::Linear).unwrap();
    let model = GaussianNoise::new(vec![mean], vec![var], &schedule).unwrap();
    // One stream per sample keeps rows independent of the batch size.
    let mut rngs: Vec<ChaCha8Rng> = (0..n as u32).map(|i| stream_rng(seed, Stream::Planner(i))).collect();
    let mut z = Tensor::matrix(n, 1, rngs.iter_mut().map(normal).collect()).unwrap();
    for k in (1..=steps).rev() {
        z = denoise_step(&schedule, &z, k, &model, &NoGuidance, 0.0, &mut rngs).unwrap();
    }
    let m = z.data().iter().sum::<f64>() / n as f64;
    let v = z.data().iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    (m, v)
}
