//! Trained model bundles on disk.
//!
//! A checkpoint is a `MACD` container of kind 3: one `HEAD` block holding
//! a TOML metadata string followed by the twenty dataset statistics, then
//! one `PARM` block per parameter tensor:
//!
//! ```text
//! PARM = name str | ndim u32 | dims u64* | data f64*
//! ```

use crate::dataset::DatasetStats;
use crate::diffusion::ScheduleConfig;
use crate::error::{FormatError, Result};
use crate::format::{in_block, parse_container, write_container, Block, Decoder, Encoder, FileKind};
use crate::models::{ModelBundle, ModelConfig};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

/// Everything besides the weights needed to rebuild a planner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    /// Hash of the run configuration that produced the weights.
    pub config_hash: String,
    pub gamma: f64,
    pub model: ModelConfig,
    pub schedule: ScheduleConfig,
}

fn names(model: &ModelBundle) -> Vec<&String> {
    model
        .denoiser
        .params
        .names
        .iter()
        .chain(&model.classifier.params.names)
        .chain(&model.inverse.params.names)
        .collect()
}

pub fn save_checkpoint(path: &Path, meta: &CheckpointMeta, model: &ModelBundle) -> Result<()> {
    let mut e = Encoder::new();
    let text = toml::to_string(meta).map_err(|err| FormatError::Malformed(format!("metadata: {err}")))?;
    e.str(&text).f64s(&model.stats.to_vec());
    let mut blocks = vec![e.finish(b"HEAD")];
    for (name, t) in names(model).into_iter().zip(model.params()) {
        let mut e = Encoder::new();
        e.str(name).u32(t.shape().len() as u32);
        for &d in t.shape() {
            e.u64(d as u64);
        }
        e.f64s(t.data());
        blocks.push(e.finish(b"PARM"));
    }
    let mut w = BufWriter::new(File::create(path)?);
    write_container(&mut w, FileKind::Checkpoint, &blocks)?;
    w.flush()?;
    Ok(())
}

fn decode_head(b: &Block) -> Result<(CheckpointMeta, DatasetStats), FormatError> {
    if &b.tag != b"HEAD" {
        return Err(FormatError::Malformed(format!("expected HEAD block, found {}", b.tag_str())));
    }
    let mut d = Decoder::new(&b.payload);
    let (text, stats) = in_block((|| Ok((d.str()?, d.f64s(20)?)))())?;
    d.finish("HEAD")?;
    let meta: CheckpointMeta = toml::from_str(&text).map_err(|e| FormatError::Malformed(format!("metadata: {e}")))?;
    let stats = DatasetStats::from_slice(&stats).map_err(|e| FormatError::Malformed(e.to_string()))?;
    Ok((meta, stats))
}

fn decode_param(b: &Block) -> Result<(String, Tensor), FormatError> {
    if &b.tag != b"PARM" {
        return Err(FormatError::Malformed(format!("unexpected block {}", b.tag_str())));
    }
    let mut d = Decoder::new(&b.payload);
    let (name, shape, data) = in_block((|| {
        let name = d.str()?;
        let ndim = d.u32()? as usize;
        if ndim > 2 {
            return Err(FormatError::Malformed(format!("parameter {name} has {ndim} dimensions")));
        }
        let shape = (0..ndim).map(|_| d.u64().map(|v| v as usize)).collect::<Result<Vec<_>, _>>()?;
        let n = shape.iter().try_fold(1usize, |acc, &v| acc.checked_mul(v));
        match n {
            Some(n) if n <= d.remaining() / 8 => Ok((name, shape, d.f64s(n)?)),
            _ => Err(FormatError::Malformed(format!("parameter {name} exceeds block"))),
        }
    })())?;
    d.finish("PARM")?;
    let t = Tensor::new(shape, data).map_err(|e| FormatError::Malformed(e.to_string()))?;
    Ok((name, t))
}

/// Rebuilds the bundle described by the metadata and fills in the stored
/// weights. Names and shapes must match the architecture exactly.
pub fn load_checkpoint(path: &Path) -> Result<(CheckpointMeta, ModelBundle)> {
    let bytes = std::fs::read(path)?;
    let blocks = parse_container(&bytes, FileKind::Checkpoint)?;
    let (head, rest) = blocks.split_first().ok_or_else(|| FormatError::Malformed("missing HEAD block".into()))?;
    let (meta, stats) = decode_head(head)?;
    meta.model.validate()?;
    let mut model = ModelBundle::new(meta.model, stats, 0)?;
    let expected: Vec<String> = names(&model).into_iter().cloned().collect();
    if rest.len() != expected.len() {
        return Err(FormatError::Malformed(format!(
            "expected {} parameter blocks, found {}",
            expected.len(),
            rest.len()
        ))
        .into());
    }
    for ((b, want), slot) in rest.iter().zip(&expected).zip(model.params_mut()) {
        let (name, t) = decode_param(b)?;
        if &name != want || t.shape() != slot.shape() {
            return Err(FormatError::Malformed(format!(
                "parameter {name} {:?} does not match {want} {:?}",
                t.shape(),
                slot.shape()
            ))
            .into());
        }
        *slot = t;
    }
    Ok((meta, model))
}
