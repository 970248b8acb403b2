//! Fits the three networks to a linear-Gaussian system whose actions are
//! exactly recoverable, and reports the loss drop and inverse-model fit.
//!
//! ```text
//! cargo run --release --example train_synthetic
//! ```

use macdmp::dataset::DatasetStats;
use macdmp::diffusion::{prepare_batch, ScheduleConfig};
use macdmp::models::{ModelBundle, ModelConfig};
use macdmp::synthetic::{linear_gaussian_windows, r_squared};
use macdmp::train::{fixed_noise_loss, train, TrainConfig};

fn main() -> macdmp::Result<()> {
    let windows = linear_gaussian_windows(2000, 8, 0.99, 5)?;
    let stats = DatasetStats::fit(&windows)?;
    let data = prepare_batch(&windows, &stats, true)?;
    let held_out = prepare_batch(&linear_gaussian_windows(256, 8, 0.99, 6)?, &stats, true)?;
    let schedule = ScheduleConfig { steps: 50, ..ScheduleConfig::default() }.build()?;
    let mut model = ModelBundle::new(ModelConfig::compact(8, 50), stats, 0)?;

    let before = fixed_noise_loss(&model, &held_out, &schedule, 9)?;
    let cfg = TrainConfig { epochs: 4, steps_per_epoch: 500, ..TrainConfig::default() };
    train(&mut model, &data, &schedule, &cfg, |l| println!("epoch {} loss {:.4}", l.epoch, l.loss.total))?;
    let after = fixed_noise_loss(&model, &held_out, &schedule, 9)?;

    let pred = model.inv_dyn_forward(&held_out.pairs)?;
    println!("held-out loss {:.4} -> {:.4} ({:.0}% lower)", before.total, after.total, 100.0 * (1.0 - after.total / before.total));
    println!("inverse dynamics R^2 {:.5}", r_squared(&pred, &held_out.actions));
    Ok(())
}
