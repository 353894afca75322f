//! Checkpoint file: one line of JSON header terminated by `\n`, followed by
//! `num_values` little-endian `f32` values, tensors concatenated in
//! [`FIELD_ORDER`] and each tensor row-major.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GateLayout, ModelDims, ModelParams, FIELD_ORDER};
use crate::error::{Error, Result};

const FORMAT: &str = "handover-events-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub dims: ModelDims,
    pub gate_layout: String,
    pub seed: u64,
    pub num_values: usize,
    pub fields: Vec<String>,
}

pub fn write_checkpoint<W: Write>(mut out: W, params: &ModelParams, seed: u64) -> Result<()> {
    let header = CheckpointHeader {
        format: FORMAT.into(),
        version: VERSION,
        dims: params.dims,
        gate_layout: params.gate_layout.code(),
        seed,
        num_values: params.num_values(),
        fields: FIELD_ORDER.iter().map(|s| s.to_string()).collect(),
    };
    let mut bytes = serde_json::to_vec(&header)?;
    bytes.push(b'\n');
    bytes.reserve(4 * header.num_values);
    for value in params.flatten() {
        bytes.extend_from_slice(&(value as f32).to_le_bytes());
    }
    out.write_all(&bytes).map_err(|e| Error::io("<checkpoint>", e))
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<(ModelParams, CheckpointHeader)> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(|e| Error::io("<checkpoint>", e))?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::InvalidArgument("checkpoint header not terminated".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[..newline])?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(Error::InvalidArgument(format!(
            "unsupported checkpoint {} v{}",
            header.format, header.version
        )));
    }
    if header.fields.iter().map(String::as_str).ne(FIELD_ORDER.iter().copied()) {
        return Err(Error::InvalidArgument("checkpoint field order differs".into()));
    }
    header.dims.validate()?;
    let payload = &bytes[newline + 1..];
    if payload.len() != 4 * header.num_values {
        return Err(Error::Shape(format!(
            "checkpoint payload has {} bytes, header promises {} values",
            payload.len(),
            header.num_values
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let layout = GateLayout::parse(&header.gate_layout)?;
    let params = ModelParams::from_flat(header.dims, layout, &values)?;
    Ok((params, header))
}

pub fn save_checkpoint(path: &Path, params: &ModelParams, seed: u64) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(std::io::BufWriter::new(file), params, seed)
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, CheckpointHeader)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(file))
}
