use super::records::{RecordStream, TransitionRecord};
use super::windows::{DatasetStats, TrajectoryWindow};
use crate::error::{FormatError, Result};
use crate::format::{in_block, parse_container, write_container, Block, Decoder, Encoder, FileKind};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

/// Metadata stored in the `HEAD` block of every dataset file.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHeader {
    pub config_hash: String,
    pub horizon: u32,
    pub gamma: f64,
    pub stats: Option<DatasetStats>,
}

fn encode_header(h: &DatasetHeader) -> Block {
    let mut e = Encoder::new();
    e.str(&h.config_hash).u32(h.horizon).f64(h.gamma);
    match &h.stats {
        None => {
            e.u8(0);
        }
        Some(s) => {
            e.u8(1)
                .f64s(&s.obs_mean)
                .f64s(&s.obs_std)
                .f64s(&s.mf_mean)
                .f64s(&s.mf_std)
                .f64(s.action_mean)
                .f64(s.action_std)
                .f64(s.return_min)
                .f64(s.return_max);
        }
    }
    e.finish(b"HEAD")
}

fn arr4(v: Vec<f64>) -> [f64; 4] {
    v.try_into().expect("four reals")
}

fn decode_header(b: &Block) -> Result<DatasetHeader, FormatError> {
    if &b.tag != b"HEAD" {
        return Err(FormatError::Malformed(format!("expected HEAD block, found {}", b.tag_str())));
    }
    let mut d = Decoder::new(&b.payload);
    let h = in_block((|| {
        let config_hash = d.str()?;
        let horizon = d.u32()?;
        let gamma = d.f64()?;
        let stats = match d.u8()? {
            0 => None,
            1 => Some(DatasetStats {
                obs_mean: arr4(d.f64s(4)?),
                obs_std: arr4(d.f64s(4)?),
                mf_mean: arr4(d.f64s(4)?),
                mf_std: arr4(d.f64s(4)?),
                action_mean: d.f64()?,
                action_std: d.f64()?,
                return_min: d.f64()?,
                return_max: d.f64()?,
            }),
            other => return Err(FormatError::Malformed(format!("stats flag {other}"))),
        };
        Ok(DatasetHeader {
            config_hash,
            horizon,
            gamma,
            stats,
        })
    })())?;
    d.finish("HEAD")?;
    Ok(h)
}

fn save(path: &Path, kind: FileKind, blocks: &[Block]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_container(&mut w, kind, blocks)?;
    w.flush()?;
    Ok(())
}

pub fn write_records(path: &Path, header: &DatasetHeader, streams: &[RecordStream]) -> Result<()> {
    let mut blocks = vec![encode_header(header)];
    for s in streams {
        let mut e = Encoder::new();
        e.str(&s.scenario).u64(s.seed).u32(s.node).u64(s.records.len() as u64);
        for r in &s.records {
            e.u64(r.t).u32(r.node).f64s(&r.obs).f64s(&r.mf_obs).f64(r.action).f64(r.reward);
        }
        blocks.push(e.finish(b"STRM"));
    }
    save(path, FileKind::Records, &blocks)
}

pub fn read_records(path: &Path) -> Result<(DatasetHeader, Vec<RecordStream>)> {
    let bytes = std::fs::read(path)?;
    let blocks = parse_container(&bytes, FileKind::Records)?;
    let (head, rest) = blocks.split_first().ok_or_else(|| FormatError::Malformed("missing HEAD block".into()))?;
    let header = decode_header(head)?;
    let mut streams = Vec::with_capacity(rest.len());
    for b in rest {
        if &b.tag != b"STRM" {
            return Err(FormatError::Malformed(format!("unexpected block {}", b.tag_str())).into());
        }
        let mut d = Decoder::new(&b.payload);
        let s = in_block((|| {
            let scenario = d.str()?;
            let seed = d.u64()?;
            let node = d.u32()?;
            let n = d.u64()? as usize;
            if n > d.remaining() / 92 {
                return Err(FormatError::Malformed("record count exceeds block".into()));
            }
            let mut records = Vec::with_capacity(n);
            for _ in 0..n {
                records.push(TransitionRecord {
                    t: d.u64()?,
                    node: d.u32()?,
                    obs: arr4(d.f64s(4)?),
                    mf_obs: arr4(d.f64s(4)?),
                    action: d.f64()?,
                    reward: d.f64()?,
                });
            }
            Ok(RecordStream {
                scenario,
                seed,
                node,
                records,
            })
        })())?;
        d.finish("STRM")?;
        streams.push(s);
    }
    Ok((header, streams))
}

pub fn write_windows(path: &Path, header: &DatasetHeader, windows: &[TrajectoryWindow]) -> Result<()> {
    let h = header.horizon as usize;
    let mut e = Encoder::new();
    e.u64(windows.len() as u64);
    for w in windows {
        if w.horizon() != h || w.xbar0.len() != h || w.actions.len() != h || w.rewards.len() != h {
            return Err(crate::Error::domain(format!(
                "window at t={} node={} does not have horizon {h}",
                w.start, w.node
            )));
        }
        e.u64(w.start).u32(w.node).f64(w.y);
        for row in w.x0.iter().chain(&w.xbar0) {
            e.f64s(row);
        }
        e.f64s(&w.actions).f64s(&w.rewards);
    }
    save(path, FileKind::Windows, &[encode_header(header), e.finish(b"WIND")])
}

pub fn read_windows(path: &Path) -> Result<(DatasetHeader, Vec<TrajectoryWindow>)> {
    let bytes = std::fs::read(path)?;
    let blocks = parse_container(&bytes, FileKind::Windows)?;
    let [head, body] = blocks.as_slice() else {
        return Err(FormatError::Malformed(format!("expected HEAD and WIND blocks, found {}", blocks.len())).into());
    };
    let header = decode_header(head)?;
    if &body.tag != b"WIND" {
        return Err(FormatError::Malformed(format!("unexpected block {}", body.tag_str())).into());
    }
    let h = header.horizon as usize;
    let mut d = Decoder::new(&body.payload);
    let windows = in_block((|| {
        let n = d.u64()? as usize;
        let per = 20 + 8 * (10 * h);
        if n > d.remaining() / per {
            return Err(FormatError::Malformed("window count exceeds block".into()));
        }
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let start = d.u64()?;
            let node = d.u32()?;
            let y = d.f64()?;
            let x0 = (0..h).map(|_| d.f64s(4).map(arr4)).collect::<Result<_, _>>()?;
            let xbar0 = (0..h).map(|_| d.f64s(4).map(arr4)).collect::<Result<_, _>>()?;
            out.push(TrajectoryWindow {
                start,
                node,
                x0,
                xbar0,
                actions: d.f64s(h)?,
                rewards: d.f64s(h)?,
                y,
            });
        }
        Ok(out)
    })())?;
    d.finish("WIND")?;
    Ok((header, windows))
}
