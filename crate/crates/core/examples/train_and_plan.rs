//! End to end: collect a dataset on one scenario, train a planner with and
//! without mean-field inputs, then evaluate both against the scripted
//! baselines. The trained checkpoints are saved for `ablate_guidance`.
//!
//! ```text
//! cargo run --release --example train_and_plan -- 20 /tmp/planners
//! ```
//!
//! Twenty epochs take a few minutes on one core; fewer epochs give a planner
//! that usually trails the baselines.

use macdmp::checkpoint::{save_checkpoint, CheckpointMeta};
use macdmp::dataset::{collect, slice_windows, BehaviorPolicy, DatasetStats};
use macdmp::diffusion::{prepare_batch, Sampler, ScheduleConfig};
use macdmp::models::{ModelBundle, ModelConfig};
use macdmp::netsim::ScenarioConfig;
use macdmp::planner::{evaluate, Planner, PlannerConfig, Policy, EVAL_FRAMES, EVAL_SEEDS};
use macdmp::train::{train, TrainConfig};
use std::path::PathBuf;

fn main() -> macdmp::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(5);
    let out = PathBuf::from(args.next().unwrap_or_else(|| ".".into()));
    std::fs::create_dir_all(&out)?;

    let cfg = ScenarioConfig::preset("s8_2v6")?;
    let (horizon, gamma) = (8, 0.99);
    let mut windows = Vec::new();
    for s in collect(&[cfg.clone()], 10, 1000, 7)? {
        windows.extend(slice_windows(&s, horizon, gamma)?);
    }
    let stats = DatasetStats::fit(&windows)?;
    let schedule = ScheduleConfig::default().build()?;
    println!("{} training windows", windows.len());

    let mut planners = Vec::new();
    for mean_field in [true, false] {
        let model_cfg = ModelConfig { mean_field, ..ModelConfig::compact(horizon, schedule.steps()) };
        let mut model = ModelBundle::new(model_cfg, stats, 1)?;
        let data = prepare_batch(&windows, &stats, mean_field)?;
        let train_cfg = TrainConfig { epochs, seed: 1, ..TrainConfig::default() };
        train(&mut model, &data, &schedule, &train_cfg, |l| {
            println!("mf={mean_field} epoch {:>3} loss {:.4}", l.epoch, l.loss.total)
        })?;
        let meta = CheckpointMeta { config_hash: cfg.hash(), gamma, model: model_cfg, schedule: schedule.config };
        let path = out.join(if mean_field { "planner.ckpt" } else { "planner_no_mf.ckpt" });
        save_checkpoint(&path, &meta, &model)?;
        println!("saved {}", path.display());

        let mut pc = PlannerConfig::new(horizon, schedule.steps());
        pc.guidance.sampler = Sampler::Dpm1;
        pc.guidance.k_sample = 10;
        planners.push(Planner::new(model, schedule.clone(), pc)?);
    }

    let mut policies: Vec<Policy> = planners.iter().map(Policy::Planner).collect();
    policies.push(Policy::Scripted(BehaviorPolicy::Uniform));
    policies.push(Policy::Scripted(BehaviorPolicy::Proportional));
    for p in policies {
        print!("{}", evaluate(p, &cfg, EVAL_FRAMES, &EVAL_SEEDS)?.summary());
    }
    Ok(())
}
