use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// The `slots x channels` resource-block grid of one MF-TDMA frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameGrid {
    pub slots_per_frame: usize,
    pub channels: usize,
    /// Seconds.
    pub frame_duration: f64,
    /// Bits per second on one channel.
    pub data_rate: f64,
}

impl FrameGrid {
    pub fn validate(&self) -> Result<()> {
        if self.slots_per_frame < 1 {
            return Err(Error::config("frame.slots", "must be >= 1"));
        }
        if self.channels < 1 {
            return Err(Error::config("frame.channels", "must be >= 1"));
        }
        if !(self.frame_duration > 0.0 && self.frame_duration.is_finite()) {
            return Err(Error::config("frame.duration_s", "must be positive"));
        }
        if !(self.data_rate > 0.0 && self.data_rate.is_finite()) {
            return Err(Error::config("frame.data_rate_bps", "must be positive"));
        }
        Ok(())
    }

    pub fn resource_blocks(&self) -> usize {
        self.slots_per_frame * self.channels
    }

    pub fn slot_duration(&self) -> f64 {
        self.frame_duration / self.slots_per_frame as f64
    }

    /// Bits one resource block carries.
    pub fn slot_capacity(&self) -> f64 {
        self.data_rate * self.slot_duration()
    }
}

/// One (slot, channel) cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ResourceBlock {
    pub slot: usize,
    pub channel: usize,
}

/// Resource blocks assigned to each node for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub blocks: Vec<Vec<ResourceBlock>>,
}

impl Allocation {
    pub fn counts(&self) -> Vec<usize> {
        self.blocks.iter().map(Vec::len).collect()
    }

    /// Checks that every cell of the grid is assigned to exactly one node.
    pub fn validate(&self, grid: &FrameGrid, nodes: usize) -> Result<()> {
        if self.blocks.len() != nodes {
            return Err(Error::Protocol(format!(
                "allocation names {} nodes, network has {nodes}",
                self.blocks.len()
            )));
        }
        let mut owner = vec![None; grid.resource_blocks()];
        for (node, cells) in self.blocks.iter().enumerate() {
            for rb in cells {
                if rb.slot >= grid.slots_per_frame || rb.channel >= grid.channels {
                    return Err(Error::Protocol(format!("node {node} holds out-of-grid block {rb:?}")));
                }
                let idx = rb.slot * grid.channels + rb.channel;
                if let Some(prev) = owner[idx] {
                    return Err(Error::Protocol(format!("block {rb:?} assigned to both {prev} and {node}")));
                }
                owner[idx] = Some(node);
            }
        }
        if let Some(idx) = owner.iter().position(Option::is_none) {
            return Err(Error::Protocol(format!(
                "block (slot {}, channel {}) is unassigned",
                idx / grid.channels,
                idx % grid.channels
            )));
        }
        Ok(())
    }
}

/// Integer block counts proportional to `demands`, summing to `total`.
///
/// Largest-remainder rounding; equal remainders go to the lower node id.
/// All-zero demand splits the grid as evenly as possible.
pub fn rb_counts(demands: &[f64], total: usize) -> Result<Vec<usize>> {
    if demands.is_empty() {
        return Err(Error::domain("no demands"));
    }
    if let Some((i, d)) = demands.iter().enumerate().find(|(_, d)| !(d.is_finite() && **d >= 0.0)) {
        return Err(Error::domain(format!("demand of node {i} must be finite and >= 0, got {d}")));
    }
    let n = demands.len();
    let sum: f64 = demands.iter().sum();
    let quotas: Vec<f64> = if sum > 0.0 {
        demands.iter().map(|d| d * total as f64 / sum).collect()
    } else {
        vec![total as f64 / n as f64; n]
    };

    // Remainders are quantized so that rescaling the demands cannot
    // reorder near-equal entries through rounding noise.
    const QUANTUM: f64 = 1e-9;
    let mut counts: Vec<usize> = quotas.iter().map(|q| (q + QUANTUM).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<(i64, usize)> = quotas
        .iter()
        .zip(&counts)
        .enumerate()
        .map(|(i, (q, &c))| (-(((q - c as f64).max(0.0) / QUANTUM).round() as i64), i))
        .collect();
    order.sort_unstable();
    for &(_, i) in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    debug_assert_eq!(counts.iter().sum::<usize>(), total);
    Ok(counts)
}

/// Normalizes demands to the grid and scatters the blocks by a uniform
/// random permutation of the cells.
pub fn allocate_rbs<R: Rng + ?Sized>(demands: &[f64], grid: &FrameGrid, rng: &mut R) -> Result<Allocation> {
    let counts = rb_counts(demands, grid.resource_blocks())?;
    let mut cells: Vec<ResourceBlock> = (0..grid.slots_per_frame)
        .flat_map(|slot| (0..grid.channels).map(move |channel| ResourceBlock { slot, channel }))
        .collect();
    cells.shuffle(rng);
    let mut blocks = Vec::with_capacity(counts.len());
    let mut offset = 0;
    for c in counts {
        let mut mine = cells[offset..offset + c].to_vec();
        mine.sort_unstable();
        blocks.push(mine);
        offset += c;
    }
    Ok(Allocation { blocks })
}
