use super::frame::{Allocation, FrameGrid};
use super::topology::Topology;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use std::collections::VecDeque;

#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub id: u64,
    pub src: usize,
    pub dst: usize,
    pub size_bits: u32,
    /// Seconds since the start of the run.
    pub created_at: f64,
    pub delivered_at: Option<f64>,
}

/// Per-frame local observation `[gen, gen_max, tran, tran_max]`, in packets.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Observation {
    pub gen: f64,
    pub gen_max: f64,
    pub tran: f64,
    pub tran_max: f64,
}

impl Observation {
    pub const DIM: usize = 4;

    pub fn to_array(self) -> [f64; 4] {
        [self.gen, self.gen_max, self.tran, self.tran_max]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Observation {
            gen: a[0],
            gen_max: a[1],
            tran: a[2],
            tran_max: a[3],
        }
    }

    /// Type invariants for a given queue capacity.
    pub fn is_valid(&self, queue_capacity: usize) -> bool {
        let cap = queue_capacity as f64;
        0.0 <= self.gen
            && self.gen <= self.gen_max
            && self.gen_max <= cap
            && 0.0 <= self.tran
            && self.tran <= self.tran_max
            && self.tran_max <= cap
    }
}

/// Componentwise mean of the one-hop neighbors' observations; a node
/// without neighbors sees its own observation.
pub fn mean_field_obs(observations: &[Observation], topology: &Topology, i: usize) -> Observation {
    let nbrs = topology.neighbors(i);
    if nbrs.is_empty() {
        return observations[i];
    }
    let mut acc = [0.0; 4];
    for &j in nbrs {
        for (a, v) in acc.iter_mut().zip(observations[j].to_array()) {
            *a += v;
        }
    }
    let n = nbrs.len() as f64;
    Observation::from_array(acc.map(|a| a / n))
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct QosCounters {
    pub generated: u64,
    pub delivered: u64,
    pub dropped: u64,
    /// Sum of end-to-end delays of delivered packets, seconds.
    pub total_delay: f64,
    pub delivered_bits: u64,
}

impl QosCounters {
    fn add(&mut self, other: &QosCounters) {
        self.generated += other.generated;
        self.delivered += other.delivered;
        self.dropped += other.dropped;
        self.total_delay += other.total_delay;
        self.delivered_bits += other.delivered_bits;
    }
}

#[derive(Debug, Clone, Default)]
struct NodeQueues {
    /// Locally generated packets.
    gen: VecDeque<Packet>,
    /// Relayed packets waiting to be forwarded (the cache queue).
    tran: VecDeque<Packet>,
}

#[derive(Debug, Clone)]
pub struct SimState {
    /// Index of the next frame to run.
    pub clock: u64,
    queues: Vec<NodeQueues>,
    pub counters: QosCounters,
    next_packet_id: u64,
    traffic_rng: ChaCha8Rng,
}

impl SimState {
    pub fn queued(&self) -> u64 {
        self.queues.iter().map(|q| (q.gen.len() + q.tran.len()) as u64).sum()
    }

    pub fn queue_lengths(&self, node: usize) -> (usize, usize) {
        (self.queues[node].gen.len(), self.queues[node].tran.len())
    }

    /// Conservation: every generated packet is delivered, dropped or queued.
    pub fn is_conserved(&self) -> bool {
        self.counters.generated == self.counters.delivered + self.counters.dropped + self.queued()
    }
}

/// Result of running one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutcome {
    pub observations: Vec<Observation>,
    pub rewards: Vec<f64>,
    pub qos: QosCounters,
    /// Packets delivered to each node (as final destination) this frame.
    pub delivered_to: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct Simulator {
    pub topology: Topology,
    pub grid: FrameGrid,
    pub packet_bits: u32,
    state: SimState,
}

impl Simulator {
    pub fn new(topology: Topology, grid: FrameGrid, packet_bits: u32, seed: u64) -> Result<Self> {
        grid.validate()?;
        if packet_bits == 0 || packet_bits as f64 > grid.slot_capacity() + 1e-9 {
            return Err(Error::config(
                "traffic.packet_bits",
                format!("must be in 1..={} (one packet per block)", grid.slot_capacity()),
            ));
        }
        let n = topology.len();
        Ok(Simulator {
            topology,
            grid,
            packet_bits,
            state: SimState {
                clock: 0,
                queues: vec![NodeQueues::default(); n],
                counters: QosCounters::default(),
                next_packet_id: 0,
                traffic_rng: stream_rng(seed, Stream::Traffic),
            },
        })
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn node_count(&self) -> usize {
        self.topology.len()
    }

    /// Places a packet at the tail of its source's generation queue,
    /// dropping it if the queue is full. Returns whether it was accepted.
    pub fn enqueue_generated(&mut self, packet: Packet) -> bool {
        let cap = self.topology.nodes[packet.src].queue_capacity;
        self.state.counters.generated += 1;
        let q = &mut self.state.queues[packet.src].gen;
        if q.len() >= cap {
            self.state.counters.dropped += 1;
            false
        } else {
            q.push_back(packet);
            true
        }
    }

    /// Draws the packets generated during `frame`, ordered by creation time.
    /// Interarrival times are exponential with each node's mean, and every
    /// destination is uniform over the other nodes.
    pub fn generate_traffic(&mut self, frame: u64) -> Vec<Packet> {
        let n = self.topology.len();
        let start = frame as f64 * self.grid.frame_duration;
        let end = start + self.grid.frame_duration;
        let mut out = Vec::new();
        for node in 0..n {
            let mean = self.topology.nodes[node].mean_interarrival;
            if !mean.is_finite() {
                continue;
            }
            let exp = Exp::new(1.0 / mean).expect("positive rate");
            let mut t = start;
            loop {
                t += exp.sample(&mut self.state.traffic_rng);
                if t >= end {
                    break;
                }
                let mut dst = self.state.traffic_rng.random_range(0..n - 1);
                if dst >= node {
                    dst += 1;
                }
                out.push(Packet {
                    id: self.state.next_packet_id,
                    src: node,
                    dst,
                    size_bits: self.packet_bits,
                    created_at: t,
                    delivered_at: None,
                });
                self.state.next_packet_id += 1;
            }
        }
        out.sort_by(|a, b| a.created_at.total_cmp(&b.created_at).then(a.id.cmp(&b.id)));
        out
    }

    /// Runs one frame: arrivals and slot-by-slot transmissions in time
    /// order, then end-of-frame delivery or relaying of every packet sent.
    pub fn step_frame(&mut self, allocation: &Allocation) -> Result<FrameOutcome> {
        let n = self.topology.len();
        allocation.validate(&self.grid, n)?;
        let frame = self.state.clock;
        let frame_start = frame as f64 * self.grid.frame_duration;
        let frame_end = frame_start + self.grid.frame_duration;
        let before = self.state.counters;

        let mut per_slot = vec![vec![0usize; self.grid.slots_per_frame]; n];
        for (node, cells) in allocation.blocks.iter().enumerate() {
            for rb in cells {
                per_slot[node][rb.slot] += 1;
            }
        }

        let mut gen_max: Vec<usize> = self.state.queues.iter().map(|q| q.gen.len()).collect();
        let mut tran_max: Vec<usize> = self.state.queues.iter().map(|q| q.tran.len()).collect();
        let arrivals = self.generate_traffic(frame);
        let mut arrivals = arrivals.into_iter().peekable();
        let mut in_flight: Vec<(usize, Packet)> = Vec::new();

        for slot in 0..self.grid.slots_per_frame {
            let slot_start = frame_start + slot as f64 * self.grid.slot_duration();
            while let Some(p) = arrivals.next_if(|p| p.created_at <= slot_start) {
                let src = p.src;
                if self.enqueue_generated(p) {
                    gen_max[src] = gen_max[src].max(self.state.queues[src].gen.len());
                }
            }
            for (node, slots) in per_slot.iter().enumerate() {
                for _ in 0..slots[slot] {
                    let Some(p) = self.pop_oldest(node) else { break };
                    let hop = self.topology.next_hop(node, p.dst).ok_or_else(|| {
                        Error::Protocol(format!("no route from {node} to {}", p.dst))
                    })?;
                    in_flight.push((hop, p));
                }
            }
        }
        for p in arrivals {
            let src = p.src;
            if self.enqueue_generated(p) {
                gen_max[src] = gen_max[src].max(self.state.queues[src].gen.len());
            }
        }

        let mut delay_sum = vec![0.0; n];
        let mut delivered_to = vec![0u64; n];
        for (hop, mut p) in in_flight {
            if hop == p.dst {
                p.delivered_at = Some(frame_end);
                let delay = frame_end - p.created_at;
                delay_sum[hop] += delay;
                delivered_to[hop] += 1;
                self.state.counters.delivered += 1;
                self.state.counters.total_delay += delay;
                self.state.counters.delivered_bits += p.size_bits as u64;
            } else {
                let cap = self.topology.nodes[hop].queue_capacity;
                let q = &mut self.state.queues[hop].tran;
                if q.len() >= cap {
                    self.state.counters.dropped += 1;
                } else {
                    q.push_back(p);
                    tran_max[hop] = tran_max[hop].max(q.len());
                }
            }
        }

        let observations = (0..n)
            .map(|i| Observation {
                gen: self.state.queues[i].gen.len() as f64,
                gen_max: gen_max[i] as f64,
                tran: self.state.queues[i].tran.len() as f64,
                tran_max: tran_max[i] as f64,
            })
            .collect();
        let rewards = (0..n)
            .map(|i| {
                if delivered_to[i] == 0 {
                    0.0
                } else {
                    -(delay_sum[i] / delivered_to[i] as f64)
                }
            })
            .collect();
        let after = self.state.counters;
        let qos = QosCounters {
            generated: after.generated - before.generated,
            delivered: after.delivered - before.delivered,
            dropped: after.dropped - before.dropped,
            total_delay: after.total_delay - before.total_delay,
            delivered_bits: after.delivered_bits - before.delivered_bits,
        };
        self.state.clock += 1;
        debug_assert!(self.state.is_conserved());
        Ok(FrameOutcome {
            observations,
            rewards,
            qos,
            delivered_to,
        })
    }

    /// Head-of-line packet with the earliest creation time across the two
    /// queues; relayed traffic wins ties.
    fn pop_oldest(&mut self, node: usize) -> Option<Packet> {
        let q = &mut self.state.queues[node];
        match (q.tran.front(), q.gen.front()) {
            (Some(t), Some(g)) if g.created_at < t.created_at => q.gen.pop_front(),
            (Some(_), _) => q.tran.pop_front(),
            (None, _) => q.gen.pop_front(),
        }
    }
}

/// Accumulates frame QoS into episode totals.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct QosTotals(pub QosCounters);

impl QosTotals {
    pub fn add(&mut self, frame: &QosCounters) {
        self.0.add(frame);
    }
}
