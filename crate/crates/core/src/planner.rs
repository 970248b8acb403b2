//! Receding-horizon control with the trained models, scripted baselines
//! and the evaluation harness.
//!
//! Every frame each agent conditions a plan on its own observation and the
//! mean of its neighbors' observations, reads the first transition of the
//! plan and asks the inverse-dynamics model which demand produces it. All
//! agents share one set of parameters; their plans are sampled as rows of
//! one batch, each row drawing from its own RNG stream.

use crate::dataset::{rollout, BehaviorPolicy, Rollout};
use crate::diffusion::{sample_plan, GuidanceConfig, NoiseSchedule, Sampler};
use crate::error::{Error, Result};
use crate::models::{ModelBundle, OBS_DIM};
use crate::netsim::{mean_field_obs, Observation, ScenarioConfig, Topology};
use crate::rng::{stream_rng, Stream};
use crate::tensor::Tensor;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// Frames per evaluation episode (5 s at 5 ms per frame).
pub const EVAL_FRAMES: u64 = 1000;
pub const EVAL_SEEDS: [u64; 3] = [1, 2, 3];
/// Default bound on the sampler's predicted `x0`, in standardized units.
pub const X0_CLIP: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerConfig {
    pub horizon: usize,
    pub guidance: GuidanceConfig,
    /// Frames between replans; in between, later steps of the last plan
    /// are executed.
    pub replan_every: usize,
    pub action_clamp_min: f64,
}

impl PlannerConfig {
    pub fn new(horizon: usize, diffusion_steps: usize) -> Self {
        PlannerConfig {
            horizon,
            guidance: GuidanceConfig {
                zeta: 1.2,
                k_sample: diffusion_steps,
                sampler: Sampler::Ancestral,
                x0_clip: Some(X0_CLIP),
            },
            replan_every: 1,
            action_clamp_min: 0.0,
        }
    }

    pub fn validate(&self, steps: usize) -> Result<()> {
        self.guidance.validate(steps)?;
        if self.replan_every < 1 || self.replan_every >= self.horizon {
            return Err(Error::config("planner.replan_every", "must lie in 1..horizon"));
        }
        if !self.action_clamp_min.is_finite() {
            return Err(Error::config("planner.action_clamp_min", "must be finite"));
        }
        Ok(())
    }
}

/// Sampled plans for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    /// Clamped demand per node for each of the first `H - 1` plan steps.
    pub demands: Vec<Vec<f64>>,
    /// Destandardized own-observation sequence per node.
    pub trajectories: Vec<Vec<[f64; 4]>>,
}

impl Plan {
    /// Demands to execute `offset` frames after the plan was made.
    pub fn demands_at(&self, offset: usize) -> Vec<f64> {
        self.demands.iter().map(|d| d[offset]).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Planner {
    pub model: ModelBundle,
    pub schedule: NoiseSchedule,
    pub config: PlannerConfig,
}

impl Planner {
    pub fn new(model: ModelBundle, schedule: NoiseSchedule, config: PlannerConfig) -> Result<Self> {
        if config.horizon != model.config.horizon {
            return Err(Error::config(
                "planner.horizon",
                format!("model was trained with horizon {}", model.config.horizon),
            ));
        }
        if schedule.steps() != model.config.diffusion_steps {
            return Err(Error::config(
                "schedule.steps",
                format!("model was trained with {} levels", model.config.diffusion_steps),
            ));
        }
        config.validate(schedule.steps())?;
        Ok(Planner { model, schedule, config })
    }

    pub fn mean_field(&self) -> bool {
        self.model.config.mean_field
    }

    pub fn name(&self) -> &'static str {
        if self.mean_field() {
            "macdmp"
        } else {
            "macdmp_no_mf"
        }
    }

    /// One independent RNG stream per agent.
    pub fn agent_rngs(seed: u64, nodes: usize) -> Vec<ChaCha8Rng> {
        (0..nodes).map(|i| stream_rng(seed, Stream::Planner(i as u32))).collect()
    }

    /// Samples a plan for every node and converts its transitions into
    /// demands.
    pub fn plan_actions(&self, obs: &[Observation], topology: &Topology, rngs: &mut [ChaCha8Rng]) -> Result<Plan> {
        let n = obs.len();
        if topology.len() != n || rngs.len() < n {
            return Err(Error::Shape {
                op: "plan_actions",
                left: vec![n, rngs.len()],
                right: vec![topology.len()],
            });
        }
        let stats = &self.model.stats;
        let h = self.config.horizon;
        let mut cond = Vec::with_capacity(n * 2 * OBS_DIM);
        for i in 0..n {
            let own = stats.standardize_obs(&obs[i].to_array());
            cond.extend_from_slice(&own);
            if self.mean_field() {
                cond.extend_from_slice(&stats.standardize_mf(&mean_field_obs(obs, topology, i).to_array()));
            } else {
                cond.extend_from_slice(&own);
            }
        }
        let cond = Tensor::matrix(n, 2 * OBS_DIM, cond)?;
        let z = sample_plan(&self.schedule, &cond, h, &self.model, &self.model, &self.config.guidance, rngs)?;

        let mut pairs = Vec::with_capacity(n * (h - 1) * 2 * OBS_DIM);
        let mut trajectories = Vec::with_capacity(n);
        for i in 0..n {
            let row = z.row(i);
            for t in 0..h - 1 {
                pairs.extend_from_slice(&row[t * OBS_DIM..(t + 2) * OBS_DIM]);
            }
            let traj: Vec<[f64; 4]> = (0..h)
                .map(|t| stats.destandardize_obs(&row[t * OBS_DIM..(t + 1) * OBS_DIM]))
                .collect();
            let live = obs[i].to_array();
            if traj[0].iter().zip(&live).any(|(a, b)| (a - b).abs() > 1e-9 * (1.0 + b.abs())) {
                return Err(Error::Protocol(format!(
                    "plan of node {i} starts at {:?}, live observation is {live:?}",
                    traj[0]
                )));
            }
            trajectories.push(traj);
        }
        let raw = self.model.inv_dyn_forward(&Tensor::matrix(n * (h - 1), 2 * OBS_DIM, pairs)?)?;
        let demands = raw
            .chunks(h - 1)
            .map(|c| {
                c.iter()
                    .map(|&a| stats.destandardize_action(a).max(self.config.action_clamp_min))
                    .collect()
            })
            .collect();
        Ok(Plan { demands, trajectories })
    }
}

/// A controller that can be evaluated.
#[derive(Debug, Clone, Copy)]
pub enum Policy<'a> {
    Planner(&'a Planner),
    Scripted(BehaviorPolicy),
}

impl Policy<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Planner(p) => p.name(),
            Policy::Scripted(b) => b.name(),
        }
    }

    fn describe(&self) -> String {
        match self {
            Policy::Planner(p) => format!(
                "{}|{}|{:?}|{:?}",
                p.name(),
                toml::to_string(&p.config).unwrap_or_default(),
                p.model.config,
                p.schedule.config
            ),
            Policy::Scripted(b) => format!("{b:?}"),
        }
    }
}

/// Runs one episode of `policy` on a fresh simulator. Traffic and the
/// allocation tie-breaks use the same streams as the scripted behavior
/// policies, so every policy faces identical packet arrivals for a seed.
pub fn run_episode(policy: Policy<'_>, cfg: &ScenarioConfig, frames: u64, seed: u64) -> Result<Rollout> {
    let mut sim = cfg.simulator(seed)?;
    let mut alloc_rng = stream_rng(seed, Stream::Allocation);
    let total = sim.grid.resource_blocks();
    let topology = sim.topology.clone();
    let label = (cfg.name.as_str(), seed);
    match policy {
        Policy::Scripted(b) => {
            let mut rng = stream_rng(seed, Stream::Policy);
            rollout(&mut sim, frames, &mut alloc_rng, label, |_, obs, _| Ok(b.demands(obs, total, &mut rng)))
        }
        Policy::Planner(p) => {
            let mut rngs = Planner::agent_rngs(seed, topology.len());
            let mut current: Option<Plan> = None;
            let mut age = 0usize;
            rollout(&mut sim, frames, &mut alloc_rng, label, |_, obs, _| {
                if current.is_none() || age >= p.config.replan_every {
                    current = Some(p.plan_actions(obs, &topology, &mut rngs)?);
                    age = 0;
                }
                let d = current.as_ref().expect("plan present").demands_at(age);
                age += 1;
                Ok(d)
            })
        }
    }
}

/// Metrics of one episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub avg_reward: f64,
    /// Delivered bits per second.
    pub throughput: f64,
    /// Mean end-to-end delay of delivered packets, seconds.
    pub avg_delay: f64,
    pub packet_loss_rate: f64,
}

impl SeedResult {
    pub fn from_rollout(seed: u64, r: &Rollout, frame_duration: f64) -> Self {
        let q = &r.qos;
        SeedResult {
            seed,
            avg_reward: r.mean_reward(),
            throughput: if r.frames == 0 {
                0.0
            } else {
                q.delivered_bits as f64 / (r.frames as f64 * frame_duration)
            },
            avg_delay: if q.delivered == 0 { 0.0 } else { q.total_delay / q.delivered as f64 },
            packet_loss_rate: if q.generated == 0 { 0.0 } else { q.dropped as f64 / q.generated as f64 },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub policy: String,
    pub scenario: String,
    pub config_hash: String,
    pub frames: u64,
    pub per_seed: Vec<SeedResult>,
}

/// Sample mean and standard deviation (`n - 1` denominator, 0 for one value).
pub fn mean_std(v: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = v.into_iter().collect();
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

pub const CSV_HEADER: &str = "policy,scenario,seed,avg_reward,throughput_bps,avg_delay_s,packet_loss_rate,config_hash";

impl EvalReport {
    pub fn avg_reward(&self) -> (f64, f64) {
        mean_std(self.per_seed.iter().map(|s| s.avg_reward))
    }

    pub fn throughput(&self) -> (f64, f64) {
        mean_std(self.per_seed.iter().map(|s| s.throughput))
    }

    pub fn avg_delay(&self) -> (f64, f64) {
        mean_std(self.per_seed.iter().map(|s| s.avg_delay))
    }

    pub fn packet_loss_rate(&self) -> (f64, f64) {
        mean_std(self.per_seed.iter().map(|s| s.packet_loss_rate))
    }

    /// CSV rows without the header, one per seed.
    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        for s in &self.per_seed {
            writeln!(
                out,
                "{},{},{},{:.9e},{:.9e},{:.9e},{:.9e},{}",
                self.policy, self.scenario, s.seed, s.avg_reward, s.throughput, s.avg_delay, s.packet_loss_rate, self.config_hash
            )
            .expect("write to string");
        }
        out
    }

    pub fn summary(&self) -> String {
        let f = |(m, s): (f64, f64)| format!("{m:.6} ± {s:.6}");
        format!(
            "{} on {} ({} seeds x {} frames, config {})\n  reward      {}\n  throughput  {} bit/s\n  delay       {} s\n  loss rate   {}\n",
            self.policy,
            self.scenario,
            self.per_seed.len(),
            self.frames,
            self.config_hash,
            f(self.avg_reward()),
            f(self.throughput()),
            f(self.avg_delay()),
            f(self.packet_loss_rate()),
        )
    }
}

/// One episode of `frames` frames per seed.
pub fn evaluate(policy: Policy<'_>, cfg: &ScenarioConfig, frames: u64, seeds: &[u64]) -> Result<EvalReport> {
    let per_seed = seeds
        .iter()
        .map(|&seed| {
            let r = run_episode(policy, cfg, frames, seed)?;
            Ok(SeedResult::from_rollout(seed, &r, cfg.frame.duration_s))
        })
        .collect::<Result<Vec<_>>>()?;
    let config_hash = crate::netsim::short_hash(format!("{}|{}|{frames}", cfg.to_toml(), policy.describe()).as_bytes());
    Ok(EvalReport {
        policy: policy.name().to_string(),
        scenario: cfg.name.clone(),
        config_hash,
        frames,
        per_seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DatasetStats;
    use crate::models::ModelConfig;

    fn planner(mean_field: bool) -> Planner {
        let cfg = ModelConfig {
            mean_field,
            ..ModelConfig::compact(4, 10)
        };
        let mut stats = DatasetStats::identity();
        stats.obs_mean = [3.0, 5.0, 1.0, 2.0];
        stats.obs_std = [2.0, 4.0, 0.5, 1.5];
        let model = ModelBundle::new(cfg, stats, 3).unwrap();
        let schedule = crate::diffusion::make_schedule(10, 1e-4, 0.2, crate::diffusion::ScheduleKind::Linear).unwrap();
        Planner::new(model, schedule, PlannerConfig::new(4, 10)).unwrap()
    }

    #[test]
    fn plans_start_at_live_observations_and_demands_are_nonnegative() {
        let p = planner(true);
        let cfg = ScenarioConfig::preset("s8_2v6").unwrap();
        let topo = cfg.topology().unwrap();
        let obs: Vec<Observation> = (0..8)
            .map(|i| Observation::from_array([i as f64, 10.0, 0.5 * i as f64, 10.0]))
            .collect();
        let mut rngs = Planner::agent_rngs(1, 8);
        let plan = p.plan_actions(&obs, &topo, &mut rngs).unwrap();
        for (i, t) in plan.trajectories.iter().enumerate() {
            for (a, b) in t[0].iter().zip(obs[i].to_array()) {
                assert!((a - b).abs() <= 1e-9);
            }
        }
        assert!(plan.demands.iter().flatten().all(|&d| d >= 0.0));
        let again = p.plan_actions(&obs, &topo, &mut Planner::agent_rngs(1, 8)).unwrap();
        assert_eq!(plan, again);
    }

    #[test]
    fn horizon_mismatch_is_a_config_error() {
        let p = planner(false);
        let err = Planner::new(p.model.clone(), p.schedule.clone(), PlannerConfig::new(6, 10)).unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
    }

    #[test]
    fn zero_traffic_gives_zero_metrics_for_every_policy() {
        let cfg = ScenarioConfig::preset("idle").unwrap();
        let p = planner(true);
        let q = planner(false);
        for policy in [
            Policy::Planner(&p),
            Policy::Planner(&q),
            Policy::Scripted(BehaviorPolicy::Uniform),
            Policy::Scripted(BehaviorPolicy::Proportional),
        ] {
            let r = evaluate(policy, &cfg, 20, &[1, 2]).unwrap();
            for s in &r.per_seed {
                assert_eq!((s.avg_reward, s.throughput, s.avg_delay, s.packet_loss_rate), (0.0, 0.0, 0.0, 0.0));
            }
        }
    }

    #[test]
    fn report_rows_and_stats() {
        let cfg = ScenarioConfig::preset("s8_2v6").unwrap();
        let r = evaluate(Policy::Scripted(BehaviorPolicy::Uniform), &cfg, 50, &[1, 2, 3]).unwrap();
        assert_eq!(r.csv_rows().lines().count(), 3);
        assert_eq!(r.config_hash.len(), 16);
        let (_, sd) = r.avg_reward();
        assert!(sd >= 0.0);
        assert_eq!(mean_std([1.0, 3.0]), (2.0, 2f64.sqrt()));
    }
}
