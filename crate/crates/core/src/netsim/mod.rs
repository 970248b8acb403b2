//! Discrete-event model of a multi-hop MF-TDMA network.
//!
//! Nodes generate Poisson traffic toward uniformly chosen destinations and
//! forward it along static shortest-hop routes. Each frame is an
//! `M x L` grid of interference-free resource blocks; one block carries
//! exactly one packet. The per-node [`Observation`] is the quartet of
//! generation/relay queue lengths and their in-frame maxima.

mod frame;
mod radio;
mod scenario;
mod sim;
mod topology;

pub use frame::{allocate_rbs, rb_counts, Allocation, FrameGrid, ResourceBlock};
pub use radio::{path_loss, received_power, RadioParams, SPEED_OF_LIGHT};
pub use scenario::{
    short_hash, FrameConfig, LayoutConfig, RadioConfig, ScenarioConfig, TrafficConfig, PRESETS,
};
pub use sim::{
    mean_field_obs, FrameOutcome, Observation, Packet, QosCounters, QosTotals, SimState, Simulator,
};
pub use topology::{build_topology, NodeSpec, Topology, TrafficClass};
