//! Drives a preset network with the scripted policies and prints QoS.
//!
//! ```text
//! cargo run --release --example simulate_network -- s9_2v7 2000
//! ```

use macdmp::dataset::{run_behavior_policy, BehaviorPolicy};
use macdmp::netsim::ScenarioConfig;
use macdmp::planner::SeedResult;

fn main() -> macdmp::Result<()> {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "s8_2v6".into());
    let frames: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1000);
    let cfg = ScenarioConfig::load(&name)?;
    let topo = cfg.topology()?;
    println!("{} : {} nodes, {} resource blocks per frame", cfg.name, topo.len(), cfg.grid().resource_blocks());
    for i in 0..topo.len() {
        println!("  node {i}: neighbors {:?}", topo.neighbors(i));
    }
    for policy in [
        BehaviorPolicy::Proportional,
        BehaviorPolicy::Uniform,
        BehaviorPolicy::NoisyProportional { sigma: 0.3 },
    ] {
        let rollout = run_behavior_policy(&cfg, policy, frames, 1)?;
        let r = SeedResult::from_rollout(1, &rollout, cfg.frame.duration_s);
        println!(
            "{:<20} reward {:>10.6}  throughput {:>10.0} bit/s  delay {:.4} s  loss {:.4}",
            policy.name(),
            r.avg_reward,
            r.throughput,
            r.avg_delay,
            r.packet_loss_rate
        );
    }
    Ok(())
}
