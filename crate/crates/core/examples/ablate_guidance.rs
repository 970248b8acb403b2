//! Sweeps the guidance scale of a saved planner.
//!
//! ```text
//! cargo run --release --example ablate_guidance -- /tmp/planners/planner.ckpt
//! ```

use macdmp::checkpoint::load_checkpoint;
use macdmp::diffusion::Sampler;
use macdmp::netsim::ScenarioConfig;
use macdmp::planner::{evaluate, Planner, PlannerConfig, Policy, EVAL_FRAMES};

fn main() -> macdmp::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "planner.ckpt".into());
    let (meta, model) = load_checkpoint(path.as_ref())?;
    let schedule = meta.schedule.build()?;
    let cfg = ScenarioConfig::preset("s8_2v6")?;
    println!("zeta,mean_reward,std_reward,mean_delay_s");
    for zeta in [0.0, 0.5, 1.2, 2.0] {
        let mut pc = PlannerConfig::new(meta.model.horizon, meta.model.diffusion_steps);
        pc.guidance.zeta = zeta;
        pc.guidance.sampler = Sampler::Dpm1;
        pc.guidance.k_sample = 10;
        let planner = Planner::new(model.clone(), schedule.clone(), pc)?;
        let report = evaluate(Policy::Planner(&planner), &cfg, EVAL_FRAMES, &[1, 2])?;
        let (r, sd) = report.avg_reward();
        println!("{zeta},{r:.6},{sd:.6},{:.5}", report.avg_delay().0);
    }
    Ok(())
}
