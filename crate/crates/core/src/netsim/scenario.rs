use super::frame::FrameGrid;
use super::radio::RadioParams;
use super::sim::Simulator;
use super::topology::{build_topology, NodeSpec, Topology, TrafficClass};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

/// Names accepted by [`ScenarioConfig::preset`].
pub const PRESETS: &[&str] = &["s8_2v6", "s8_4v4", "s9_2v7", "s9_4v5", "s12_3v9", "sym2", "idle"];

const MAX_LAYOUT_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutConfig {
    pub nodes: usize,
    /// Nodes `0..high_rate_nodes` carry high-rate traffic.
    pub high_rate_nodes: usize,
    /// Side of the square deployment area, meters.
    pub area_m: f64,
    pub seed: u64,
    /// Explicit positions; overrides the random layout when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficConfig {
    pub high_interarrival_s: f64,
    pub low_interarrival_s: f64,
    pub packet_bits: u32,
    pub queue_capacity: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadioConfig {
    pub transmit_power_w: f64,
    pub gain_tx: f64,
    pub gain_rx: f64,
    pub carrier_freq_hz: f64,
    /// Link range of the nominal radio; sets the receiver sensitivity.
    /// Mutually exclusive with `rx_sensitivity_w`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rx_sensitivity_w: Option<f64>,
    #[serde(default)]
    pub limited_rf: bool,
    #[serde(default = "default_freq_factor")]
    pub freq_factor: f64,
    #[serde(default = "default_power_factor")]
    pub power_factor: f64,
}

fn default_freq_factor() -> f64 {
    2.0
}

fn default_power_factor() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameConfig {
    pub slots: usize,
    pub channels: usize,
    pub duration_s: f64,
    pub data_rate_bps: f64,
}

/// Everything needed to build a network and its simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub layout: LayoutConfig,
    pub traffic: TrafficConfig,
    pub radio: RadioConfig,
    pub frame: FrameConfig,
}

impl ScenarioConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let (nodes, high, seed) = match name {
            "s8_2v6" => (8, 2, 101),
            "s8_4v4" => (8, 4, 102),
            "s9_2v7" => (9, 2, 103),
            "s9_4v5" => (9, 4, 104),
            "s12_3v9" => (12, 3, 105),
            "sym2" => {
                let mut cfg = Self::base("sym2", 2, 0, 0);
                cfg.layout.positions = Some(vec![[0.0, 0.0], [2000.0, 0.0]]);
                cfg.traffic.low_interarrival_s = 0.0025;
                return Ok(cfg);
            }
            "idle" => {
                let mut cfg = Self::base("idle", 8, 2, 101);
                cfg.traffic.high_interarrival_s = f64::INFINITY;
                cfg.traffic.low_interarrival_s = f64::INFINITY;
                return Ok(cfg);
            }
            other => {
                return Err(Error::config(
                    "scenario",
                    format!("unknown preset `{other}` (known: {})", PRESETS.join(", ")),
                ))
            }
        };
        Ok(Self::base(name, nodes, high, seed))
    }

    fn base(name: &str, nodes: usize, high: usize, seed: u64) -> Self {
        ScenarioConfig {
            name: name.to_string(),
            layout: LayoutConfig {
                nodes,
                high_rate_nodes: high,
                area_m: 10_000.0,
                seed,
                positions: None,
            },
            traffic: TrafficConfig {
                high_interarrival_s: 0.002,
                low_interarrival_s: 0.008,
                packet_bits: 1000,
                queue_capacity: 50,
            },
            radio: RadioConfig {
                transmit_power_w: 1.0,
                gain_tx: 1.0,
                gain_rx: 1.0,
                carrier_freq_hz: 2.4e9,
                range_m: Some(3600.0),
                rx_sensitivity_w: None,
                limited_rf: false,
                freq_factor: default_freq_factor(),
                power_factor: default_power_factor(),
            },
            frame: FrameConfig {
                slots: 10,
                channels: 4,
                duration_s: 0.005,
                data_rate_bps: 2e6,
            },
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .map(|s| key_at(text, s.start))
                .unwrap_or_else(|| "scenario".to_string());
            Error::config(field, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// A preset name or a path to a TOML file.
    pub fn load(name_or_path: &str) -> Result<Self> {
        if PRESETS.contains(&name_or_path) {
            return Self::preset(name_or_path);
        }
        let path = Path::new(name_or_path);
        if !path.exists() {
            return Err(Error::config(
                "config",
                format!("`{name_or_path}` is neither a preset ({}) nor an existing file", PRESETS.join(", ")),
            ));
        }
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML.
    pub fn hash(&self) -> String {
        short_hash(self.to_toml().as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        let l = &self.layout;
        if l.nodes < 2 {
            return Err(Error::config("layout.nodes", "must be >= 2"));
        }
        if l.high_rate_nodes > l.nodes {
            return Err(Error::config("layout.high_rate_nodes", "exceeds layout.nodes"));
        }
        if !(l.area_m > 0.0 && l.area_m.is_finite()) {
            return Err(Error::config("layout.area_m", "must be positive"));
        }
        if let Some(p) = &l.positions {
            if p.len() != l.nodes {
                return Err(Error::config(
                    "layout.positions",
                    format!("{} positions for {} nodes", p.len(), l.nodes),
                ));
            }
        }
        let t = &self.traffic;
        for (field, v) in [
            ("traffic.high_interarrival_s", t.high_interarrival_s),
            ("traffic.low_interarrival_s", t.low_interarrival_s),
        ] {
            if !(v > 0.0) {
                return Err(Error::config(field, "must be > 0 (inf disables traffic)"));
            }
        }
        if t.queue_capacity < 1 {
            return Err(Error::config("traffic.queue_capacity", "must be >= 1"));
        }
        match (self.radio.range_m, self.radio.rx_sensitivity_w) {
            (Some(_), Some(_)) => {
                return Err(Error::config("radio.range_m", "give either range_m or rx_sensitivity_w, not both"))
            }
            (None, None) => return Err(Error::config("radio.range_m", "one of range_m or rx_sensitivity_w is required")),
            _ => {}
        }
        for (field, v) in [("radio.freq_factor", self.radio.freq_factor), ("radio.power_factor", self.radio.power_factor)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(field, "must be positive"));
            }
        }
        self.radio_params()?;
        let grid = self.grid();
        grid.validate()?;
        if t.packet_bits == 0 || t.packet_bits as f64 > grid.slot_capacity() + 1e-9 {
            return Err(Error::config(
                "traffic.packet_bits",
                format!("must be in 1..={} (one packet per block)", grid.slot_capacity()),
            ));
        }
        Ok(())
    }

    pub fn radio_params(&self) -> Result<RadioParams> {
        let r = &self.radio;
        let mut p = RadioParams {
            transmit_power: r.transmit_power_w,
            gain_tx: r.gain_tx,
            gain_rx: r.gain_rx,
            carrier_freq: r.carrier_freq_hz,
            rx_sensitivity: r.rx_sensitivity_w.unwrap_or(1.0),
        };
        if let Some(range) = r.range_m {
            p = p.with_range(range).map_err(|_| Error::config("radio.range_m", "must be positive"))?;
        }
        p.validate()?;
        if r.limited_rf {
            p = p.degraded(r.freq_factor, r.power_factor);
        }
        Ok(p)
    }

    pub fn grid(&self) -> FrameGrid {
        FrameGrid {
            slots_per_frame: self.frame.slots,
            channels: self.frame.channels,
            frame_duration: self.frame.duration_s,
            data_rate: self.frame.data_rate_bps,
        }
    }

    fn node_specs(&self, positions: &[[f64; 2]]) -> Vec<NodeSpec> {
        positions
            .iter()
            .enumerate()
            .map(|(id, &position)| {
                let high = id < self.layout.high_rate_nodes;
                NodeSpec {
                    id,
                    position,
                    traffic_class: if high { TrafficClass::High } else { TrafficClass::Low },
                    mean_interarrival: if high {
                        self.traffic.high_interarrival_s
                    } else {
                        self.traffic.low_interarrival_s
                    },
                    queue_capacity: self.traffic.queue_capacity,
                }
            })
            .collect()
    }

    /// Builds the topology, redrawing random layouts until connected.
    pub fn topology(&self) -> Result<Topology> {
        let radio = self.radio_params()?;
        if let Some(p) = &self.layout.positions {
            return build_topology(self.node_specs(p), &radio);
        }
        let mut rng = stream_rng(self.layout.seed, Stream::Layout);
        let side = self.layout.area_m;
        for _ in 0..MAX_LAYOUT_ATTEMPTS {
            let positions: Vec<[f64; 2]> = (0..self.layout.nodes)
                .map(|_| [rng.random::<f64>() * side, rng.random::<f64>() * side])
                .collect();
            match build_topology(self.node_specs(&positions), &radio) {
                Ok(t) => return Ok(t),
                Err(Error::Disconnected(_)) => continue,
                Err(e) => return Err(e),
            }
        }
        Err(Error::config(
            "layout",
            format!(
                "no connected layout after {MAX_LAYOUT_ATTEMPTS} draws (range {:.0} m, area {:.0} m)",
                radio.range(),
                side
            ),
        ))
    }

    pub fn simulator(&self, seed: u64) -> Result<Simulator> {
        self.validate()?;
        Simulator::new(self.topology()?, self.grid(), self.traffic.packet_bits, seed)
    }
}

/// Dotted key of the TOML line containing byte `pos`, e.g. `traffic.packet_bits`.
fn key_at(text: &str, pos: usize) -> String {
    let mut table = String::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if trimmed.starts_with('[') {
            table = trimmed.trim_matches(|c| c == '[' || c == ']').trim().to_string();
        }
        if pos < offset + line.len() {
            let key = trimmed.split('=').next().unwrap_or("").trim();
            return match (table.is_empty(), key.is_empty() || trimmed.starts_with('[')) {
                (_, true) if table.is_empty() => "scenario".to_string(),
                (_, true) => table,
                (true, false) => key.to_string(),
                (false, false) => format!("{table}.{key}"),
            };
        }
        offset += line.len();
    }
    "scenario".to_string()
}

pub fn short_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}
