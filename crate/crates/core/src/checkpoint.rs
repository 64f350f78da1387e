//! Model checkpoints.
//!
//! Layout: a magic line, a one-line JSON header describing the network and
//! every stored tensor, then the tensor values little-endian in header
//! order at the recorded precision.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{build_network, Model, NetworkSpec};
use crate::tensor::{Layer, Precision, Scalar, StateKind};
use crate::train::TrainConfig;

pub const CHECKPOINT_MAGIC: &str = "RCNR-CHECKPOINT";
pub const CHECKPOINT_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorRecord {
    pub name: String,
    pub kind: StateKind,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format_version: String,
    pub precision: Precision,
    pub spec: NetworkSpec,
    /// Training settings that produced the weights, when known.
    pub train: Option<TrainConfig>,
    pub tensors: Vec<TensorRecord>,
}

fn malformed(msg: impl Into<String>) -> Error {
    Error::MalformedCheckpoint(msg.into())
}

pub fn encode<T: Scalar>(model: &mut Model<T>, train: Option<&TrainConfig>) -> Result<Vec<u8>> {
    let spec = model.spec().clone();
    let state = model.state_mut("");
    let header = CheckpointHeader {
        format_version: CHECKPOINT_VERSION.to_string(),
        precision: T::PRECISION,
        spec,
        train: train.cloned(),
        tensors: state
            .iter()
            .map(|e| TensorRecord { name: e.name.clone(), kind: e.kind, shape: e.tensor.shape().to_vec() })
            .collect(),
    };
    let mut out = format!("{CHECKPOINT_MAGIC}\n").into_bytes();
    out.extend(serde_json::to_vec(&header).map_err(|e| malformed(e.to_string()))?);
    out.push(b'\n');
    for e in &state {
        for &v in e.tensor.data() {
            match T::PRECISION {
                Precision::F32 => out.extend((v.as_f64() as f32).to_le_bytes()),
                Precision::F64 => out.extend(v.as_f64().to_le_bytes()),
            }
        }
    }
    Ok(out)
}

fn split_line(bytes: &[u8]) -> Option<(&[u8], &[u8])> {
    let at = bytes.iter().position(|&b| b == b'\n')?;
    Some((&bytes[..at], &bytes[at + 1..]))
}

pub fn decode_header(bytes: &[u8]) -> Result<(CheckpointHeader, &[u8])> {
    let (magic, rest) = split_line(bytes).ok_or_else(|| malformed("missing header"))?;
    if magic != CHECKPOINT_MAGIC.as_bytes() {
        return Err(malformed("not a checkpoint file (bad magic line)"));
    }
    let (json, payload) = split_line(rest).ok_or_else(|| malformed("truncated header"))?;
    let value: serde_json::Value = serde_json::from_slice(json).map_err(|e| malformed(format!("header: {e}")))?;
    match value.get("format_version").and_then(|v| v.as_str()) {
        Some(CHECKPOINT_VERSION) => {}
        Some(other) => {
            return Err(Error::VersionMismatch { expected: CHECKPOINT_VERSION.into(), found: other.into() })
        }
        None => return Err(malformed("header lacks format_version")),
    }
    let header: CheckpointHeader = serde_json::from_value(value).map_err(|e| malformed(format!("header: {e}")))?;
    header.spec.validate().map_err(|e| malformed(format!("network spec: {e}")))?;
    Ok((header, payload))
}

/// Rebuilds a model from checkpoint bytes, converting to `T` if the stored
/// precision differs.
pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<(Model<T>, CheckpointHeader)> {
    let (header, payload) = decode_header(bytes)?;
    let mut model = build_network::<T>(&header.spec, 0)?;
    let width = match header.precision {
        Precision::F32 => 4,
        Precision::F64 => 8,
    };
    {
        let state = model.state_mut("");
        if state.len() != header.tensors.len() {
            return Err(malformed(format!(
                "header lists {} tensors, network has {}",
                header.tensors.len(),
                state.len()
            )));
        }
        for (e, r) in state.iter().zip(&header.tensors) {
            if e.name != r.name || e.kind != r.kind || e.tensor.shape() != r.shape.as_slice() {
                return Err(malformed(format!("tensor {} does not match the network layout", r.name)));
            }
        }
        let expected: usize = state.iter().map(|e| e.tensor.len() * width).sum();
        if payload.len() != expected {
            return Err(malformed(format!("payload is {} bytes, expected {expected}", payload.len())));
        }
        let mut chunks = payload.chunks_exact(width);
        for e in state {
            for v in e.tensor.data_mut() {
                let raw = chunks.next().expect("payload length checked");
                *v = T::of(match header.precision {
                    Precision::F32 => f32::from_le_bytes(raw.try_into().expect("4 bytes")) as f64,
                    Precision::F64 => f64::from_le_bytes(raw.try_into().expect("8 bytes")),
                });
            }
        }
    }
    Ok((model, header))
}

pub fn save_checkpoint<T: Scalar>(model: &mut Model<T>, train: Option<&TrainConfig>, path: &Path) -> Result<()> {
    std::fs::write(path, encode(model, train)?)?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(Model<T>, CheckpointHeader)> {
    decode(&std::fs::read(path)?)
}
