use super::radio::{received_power, RadioParams};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrafficClass {
    High,
    Low,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: usize,
    /// Position in meters.
    pub position: [f64; 2],
    pub traffic_class: TrafficClass,
    /// Mean packet interarrival time in seconds; `f64::INFINITY` disables
    /// traffic generation at this node.
    pub mean_interarrival: f64,
    /// Per-queue capacity in packets.
    pub queue_capacity: usize,
}

impl NodeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.queue_capacity < 1 {
            return Err(Error::config(format!("node[{}].queue_capacity", self.id), "must be >= 1"));
        }
        if !(self.mean_interarrival > 0.0) {
            return Err(Error::config(format!("node[{}].mean_interarrival", self.id), "must be > 0"));
        }
        Ok(())
    }

    pub fn distance_to(&self, other: &NodeSpec) -> f64 {
        let dx = self.position[0] - other.position[0];
        let dy = self.position[1] - other.position[1];
        (dx * dx + dy * dy).sqrt()
    }
}

/// Static connectivity and shortest-hop routing.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub nodes: Vec<NodeSpec>,
    adjacency: Vec<Vec<bool>>,
    neighbors: Vec<Vec<usize>>,
    /// `next_hop[src][dst]`; `None` on the diagonal.
    next_hop: Vec<Vec<Option<usize>>>,
    hops: Vec<Vec<usize>>,
}

impl Topology {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn adjacent(&self, i: usize, j: usize) -> bool {
        self.adjacency[i][j]
    }

    /// One-hop neighbors of `i`, ascending by id.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn next_hop(&self, src: usize, dst: usize) -> Option<usize> {
        self.next_hop[src][dst]
    }

    pub fn hop_count(&self, src: usize, dst: usize) -> usize {
        self.hops[src][dst]
    }
}

/// Links every pair whose received power reaches the sensitivity and
/// precomputes shortest-hop routes (lowest neighbor id on ties).
pub fn build_topology(nodes: Vec<NodeSpec>, radio: &RadioParams) -> Result<Topology> {
    let n = nodes.len();
    if n < 2 {
        return Err(Error::domain(format!("need at least 2 nodes, got {n}")));
    }
    radio.validate()?;
    for (i, node) in nodes.iter().enumerate() {
        node.validate()?;
        if node.id != i {
            return Err(Error::config(format!("node[{i}].id"), format!("expected {i}, got {}", node.id)));
        }
    }

    let mut adjacency = vec![vec![false; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = nodes[i].distance_to(&nodes[j]);
            if d <= 0.0 {
                return Err(Error::domain(format!("nodes {i} and {j} share a position")));
            }
            if received_power(radio, d)? >= radio.rx_sensitivity {
                adjacency[i][j] = true;
                adjacency[j][i] = true;
            }
        }
    }
    let neighbors: Vec<Vec<usize>> = adjacency
        .iter()
        .map(|row| row.iter().enumerate().filter(|(_, &a)| a).map(|(j, _)| j).collect())
        .collect();

    // hops[src][dst] via one BFS per destination.
    let mut hops = vec![vec![usize::MAX; n]; n];
    for dst in 0..n {
        hops[dst][dst] = 0;
        let mut queue = VecDeque::from([dst]);
        while let Some(u) = queue.pop_front() {
            for &v in &neighbors[u] {
                if hops[v][dst] == usize::MAX {
                    hops[v][dst] = hops[u][dst] + 1;
                    queue.push_back(v);
                }
            }
        }
    }

    let unreachable: Vec<(usize, usize)> = (0..n)
        .flat_map(|s| (0..n).map(move |d| (s, d)))
        .filter(|&(s, d)| s < d && hops[s][d] == usize::MAX)
        .collect();
    if !unreachable.is_empty() {
        return Err(Error::Disconnected(unreachable));
    }

    let mut next_hop = vec![vec![None; n]; n];
    for src in 0..n {
        for dst in 0..n {
            if src != dst {
                next_hop[src][dst] = neighbors[src].iter().copied().find(|&nb| hops[nb][dst] + 1 == hops[src][dst]);
            }
        }
    }

    Ok(Topology {
        nodes,
        adjacency,
        neighbors,
        next_hop,
        hops,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn radio() -> RadioParams {
        RadioParams {
            transmit_power: 1.0,
            gain_tx: 1.0,
            gain_rx: 1.0,
            carrier_freq: 2.4e9,
            rx_sensitivity: 1.0,
        }
        .with_range(3600.0)
        .unwrap()
    }

    fn node(id: usize, x: f64, y: f64) -> NodeSpec {
        NodeSpec {
            id,
            position: [x, y],
            traffic_class: TrafficClass::Low,
            mean_interarrival: 0.01,
            queue_capacity: 50,
        }
    }

    #[test]
    fn boundary_power_counts_as_link() {
        let mut r = radio();
        r.rx_sensitivity = received_power(&r, 1234.5).unwrap();
        let topo = build_topology(vec![node(0, 0.0, 0.0), node(1, 1234.5, 0.0)], &r).unwrap();
        assert!(topo.adjacent(0, 1));
    }

    #[test]
    fn line_routes_through_middle() {
        let nodes = vec![node(0, 0.0, 0.0), node(1, 3000.0, 0.0), node(2, 6000.0, 0.0)];
        let topo = build_topology(nodes, &radio()).unwrap();
        assert!(!topo.adjacent(0, 2));
        assert_eq!(topo.next_hop(0, 2), Some(1));
        assert_eq!(topo.next_hop(2, 0), Some(1));
        assert_eq!(topo.next_hop(0, 1), Some(1));
        assert_eq!(topo.hop_count(0, 2), 2);
    }

    #[test]
    fn ties_prefer_lower_neighbor_id() {
        // Square: 0 and 3 are diagonal, both 1 and 2 are two-hop relays.
        let nodes = vec![node(0, 0.0, 0.0), node(1, 3000.0, 0.0), node(2, 0.0, 3000.0), node(3, 3000.0, 3000.0)];
        let topo = build_topology(nodes, &radio()).unwrap();
        assert_eq!(topo.next_hop(0, 3), Some(1));
        assert_eq!(topo.next_hop(3, 0), Some(1));
    }

    #[test]
    fn disconnected_layout_lists_pairs() {
        let nodes = vec![node(0, 0.0, 0.0), node(1, 9000.0, 0.0)];
        match build_topology(nodes, &radio()) {
            Err(Error::Disconnected(pairs)) => assert_eq!(pairs, vec![(0, 1)]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn adjacency_matches_radius_on_random_layouts() {
        let r = radio();
        let range = r.range();
        assert!((range - 3600.0).abs() < 1e-6);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut checked = 0;
        while checked < 20 {
            let nodes: Vec<NodeSpec> = (0..8)
                .map(|i| node(i, rng.random::<f64>() * 10_000.0, rng.random::<f64>() * 10_000.0))
                .collect();
            let Ok(topo) = build_topology(nodes.clone(), &r) else { continue };
            checked += 1;
            for i in 0..8 {
                for j in 0..8 {
                    if i == j {
                        continue;
                    }
                    let d = nodes[i].distance_to(&nodes[j]);
                    if (d - range).abs() < 1e-6 {
                        continue;
                    }
                    assert_eq!(topo.adjacent(i, j), d <= range, "pair {i},{j} at {d}");
                    assert_eq!(topo.adjacent(i, j), topo.adjacent(j, i));
                }
                assert!(!topo.adjacent(i, i));
                for j in 0..8 {
                    if let Some(h) = topo.next_hop(i, j) {
                        assert!(topo.adjacent(i, h));
                    } else {
                        assert_eq!(i, j);
                    }
                }
            }
        }
    }
}
