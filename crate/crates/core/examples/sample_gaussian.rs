//! Runs both samplers with the exact noise predictor of a known Gaussian
//! and compares the empirical moments of the samples with the target.
//!
//! ```text
//! cargo run --release --example sample_gaussian
//! ```

use macdmp::diffusion::{sample_plan, GaussianNoise, GuidanceConfig, NoGuidance, Sampler, ScheduleConfig};
use macdmp::rng::{stream_rng, Stream};
use macdmp::tensor::Tensor;

fn main() -> macdmp::Result<()> {
    let (horizon, rows) = (4, 4000);
    let width = 2 * horizon * 4;
    let schedule = ScheduleConfig { steps: 1000, ..ScheduleConfig::default() }.build()?;
    let mean: Vec<f64> = (0..width).map(|j| 0.5 * (j as f64 * 0.7).sin()).collect();
    let var: Vec<f64> = (0..width).map(|j| 0.3 + 0.05 * (j % 7) as f64).collect();
    let model = GaussianNoise::new(mean.clone(), var.clone(), &schedule)?;
    // Conditioning on the target mean leaves the other coordinates untouched.
    let cond_row: Vec<f64> = mean[..4].iter().chain(&mean[horizon * 4..horizon * 4 + 4]).copied().collect();
    let cond = Tensor::matrix(rows, 8, cond_row.repeat(rows))?;

    for (sampler, k_sample) in [(Sampler::Ancestral, 1000), (Sampler::Dpm1, 50)] {
        let guidance = GuidanceConfig { zeta: 0.0, k_sample, sampler, x0_clip: None };
        let mut rngs: Vec<_> = (0..rows as u32).map(|i| stream_rng(3, Stream::Planner(i))).collect();
        let z = sample_plan(&schedule, &cond, horizon, &model, &NoGuidance, &guidance, &mut rngs)?;
        let (mut worst_mean, mut worst_var) = (0.0f64, 0.0f64);
        for j in (4..horizon * 4).chain(horizon * 4 + 4..width) {
            let col: Vec<f64> = (0..rows).map(|r| z.row(r)[j]).collect();
            let m = col.iter().sum::<f64>() / rows as f64;
            let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (rows - 1) as f64;
            worst_mean = worst_mean.max((m - mean[j]).abs() / var[j].sqrt());
            worst_var = worst_var.max((v / var[j] - 1.0).abs());
        }
        println!("{sampler:?} with {k_sample} steps: worst mean error {worst_mean:.4} sd, worst variance error {:.2}%", 100.0 * worst_var);
    }
    Ok(())
}
