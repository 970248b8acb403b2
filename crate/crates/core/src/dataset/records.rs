use crate::error::{Error, Result};
use crate::netsim::{allocate_rbs, mean_field_obs, Observation, QosCounters, ScenarioConfig, Simulator};
use crate::rng::{stream_rng, Stream};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// One agent's view of one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionRecord {
    pub t: u64,
    pub node: u32,
    /// Observation the action was chosen from.
    pub obs: [f64; 4],
    pub mf_obs: [f64; 4],
    /// Raw resource-block demand before normalization.
    pub action: f64,
    pub reward: f64,
}

/// Consecutive records of one node in one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordStream {
    pub scenario: String,
    pub seed: u64,
    pub node: u32,
    pub records: Vec<TransitionRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BehaviorPolicy {
    /// Demand equal to the node's backlog `gen + tran`.
    Proportional,
    /// Equal share `M*L/N` for everyone.
    Uniform,
    /// Backlog demand times `exp(sigma * z)`, `z` standard normal.
    NoisyProportional { sigma: f64 },
}

impl BehaviorPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            BehaviorPolicy::Proportional => "proportional",
            BehaviorPolicy::Uniform => "uniform",
            BehaviorPolicy::NoisyProportional { .. } => "noisy-proportional",
        }
    }

    pub fn demands(&self, obs: &[Observation], total_blocks: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let n = obs.len();
        match *self {
            BehaviorPolicy::Uniform => vec![total_blocks as f64 / n as f64; n],
            BehaviorPolicy::Proportional => obs.iter().map(|o| o.gen + o.tran).collect(),
            BehaviorPolicy::NoisyProportional { sigma } => obs
                .iter()
                .map(|o| {
                    let z: f64 = StandardNormal.sample(rng);
                    (o.gen + o.tran) * (sigma * z).exp()
                })
                .collect(),
        }
    }
}

/// Outcome of driving a simulator with some policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub streams: Vec<RecordStream>,
    pub qos: QosCounters,
    pub frames: u64,
}

impl Rollout {
    /// Reward averaged over frames and nodes.
    pub fn mean_reward(&self) -> f64 {
        let (sum, n) = self
            .streams
            .iter()
            .flat_map(|s| &s.records)
            .fold((0.0, 0usize), |(s, n), r| (s + r.reward, n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }
}

/// Runs `frames` frames. Each frame the policy sees every node's current
/// observation and mean-field observation and returns raw demands; the
/// demands are normalized onto the grid by [`allocate_rbs`].
pub fn rollout<P>(sim: &mut Simulator, frames: u64, alloc_rng: &mut ChaCha8Rng, label: (&str, u64), mut policy: P) -> Result<Rollout>
where
    P: FnMut(u64, &[Observation], &[Observation]) -> Result<Vec<f64>>,
{
    let n = sim.node_count();
    let grid = sim.grid;
    let mut obs = vec![Observation::default(); n];
    let mut streams: Vec<RecordStream> = (0..n)
        .map(|i| RecordStream {
            scenario: label.0.to_string(),
            seed: label.1,
            node: i as u32,
            records: Vec::with_capacity(frames as usize),
        })
        .collect();
    let mut qos = QosCounters::default();
    for _ in 0..frames {
        let t = sim.state().clock;
        let mf: Vec<Observation> = (0..n).map(|i| mean_field_obs(&obs, &sim.topology, i)).collect();
        let demands = policy(t, &obs, &mf)?;
        if demands.len() != n {
            return Err(Error::Protocol(format!("policy returned {} demands for {n} nodes", demands.len())));
        }
        let alloc = allocate_rbs(&demands, &grid, alloc_rng)?;
        assert_eq!(alloc.counts().iter().sum::<usize>(), grid.resource_blocks());
        let out = sim.step_frame(&alloc)?;
        for i in 0..n {
            streams[i].records.push(TransitionRecord {
                t,
                node: i as u32,
                obs: obs[i].to_array(),
                mf_obs: mf[i].to_array(),
                action: demands[i],
                reward: out.rewards[i],
            });
        }
        qos.generated += out.qos.generated;
        qos.delivered += out.qos.delivered;
        qos.dropped += out.qos.dropped;
        qos.total_delay += out.qos.total_delay;
        qos.delivered_bits += out.qos.delivered_bits;
        obs = out.observations;
    }
    Ok(Rollout { streams, qos, frames })
}

/// One episode of a scripted policy on a fresh simulator.
pub fn run_behavior_policy(cfg: &ScenarioConfig, policy: BehaviorPolicy, frames: u64, seed: u64) -> Result<Rollout> {
    let mut sim = cfg.simulator(seed)?;
    let mut alloc_rng = stream_rng(seed, Stream::Allocation);
    let mut policy_rng = stream_rng(seed, Stream::Policy);
    let total = sim.grid.resource_blocks();
    rollout(&mut sim, frames, &mut alloc_rng, (&cfg.name, seed), |_, obs, _| {
        Ok(policy.demands(obs, total, &mut policy_rng))
    })
}

/// Behavior policy of episode `e` in the collection mix: half
/// proportional, 30% noisy-proportional, 20% uniform.
fn mix_policy(e: usize) -> BehaviorPolicy {
    match e % 10 {
        0..=4 => BehaviorPolicy::Proportional,
        5..=7 => BehaviorPolicy::NoisyProportional { sigma: 0.3 },
        _ => BehaviorPolicy::Uniform,
    }
}

/// Collects `episodes` episodes split evenly (round robin) across the
/// scenarios. Episode seeds live in a range disjoint from small
/// evaluation seeds.
pub fn collect(scenarios: &[ScenarioConfig], episodes: usize, frames: u64, seed: u64) -> Result<Vec<RecordStream>> {
    if scenarios.is_empty() {
        return Err(Error::config("scenarios", "at least one scenario is required"));
    }
    let mut out = Vec::new();
    for e in 0..episodes {
        let cfg = &scenarios[e % scenarios.len()];
        let episode_seed = (seed << 20) ^ (1 << 40) ^ e as u64;
        out.extend(run_behavior_policy(cfg, mix_policy(e), frames, episode_seed)?.streams);
    }
    Ok(out)
}
