//! Training checkpoints: a length-prefixed JSON header followed by `EMB1`
//! blocks for the weights, bias and both AdamW moments.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamWConfig, LinearHead, OptimState, TrainError};
use crate::embeddings::tensor_f64 as blocks;
use crate::embeddings::EmbedError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub inputs: usize,
    pub outputs: usize,
    pub step: u64,
    pub hyper: AdamWConfig,
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub head: LinearHead,
    pub state: OptimState,
}

fn corrupt(e: impl std::fmt::Display) -> TrainError {
    TrainError::Checkpoint(e.to_string())
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let header = serde_json::to_vec(&ck.header).expect("header serializes");
    let mut out = (header.len() as u32).to_le_bytes().to_vec();
    out.extend(header);
    let (i, o) = (ck.head.inputs, ck.head.outputs);
    out.extend(blocks::encode(&[o, i], ck.head.weights()));
    out.extend(blocks::encode(&[o], ck.head.bias()));
    out.extend(blocks::encode(&[ck.state.m.len()], &ck.state.m));
    out.extend(blocks::encode(&[ck.state.v.len()], &ck.state.v));
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, TrainError> {
    if bytes.len() < 4 {
        return Err(corrupt("truncated"));
    }
    let hlen = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
    let body = bytes.get(4..4 + hlen).ok_or_else(|| corrupt("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(body).map_err(corrupt)?;
    let mut rest = &bytes[4 + hlen..];
    let mut next = || -> Result<(Vec<usize>, Vec<f64>), EmbedError> {
        let (dims, data, used) = blocks::decode(rest)?;
        rest = &rest[used..];
        Ok((dims, data))
    };
    let (wd, w) = next().map_err(corrupt)?;
    let (_, b) = next().map_err(corrupt)?;
    let (_, m) = next().map_err(corrupt)?;
    let (_, v) = next().map_err(corrupt)?;
    if wd != [header.outputs, header.inputs]
        || b.len() != header.outputs
        || m.len() != w.len() + b.len()
        || v.len() != m.len()
    {
        return Err(corrupt("block shapes disagree with header"));
    }
    let head = LinearHead::from_parts(w, b)?;
    let state = OptimState { m, v, t: header.step, hyper: header.hyper };
    Ok(Checkpoint { header, head, state })
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), TrainError> {
    crate::embeddings::atomic_write(path, &encode_checkpoint(ck)).map_err(corrupt)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, TrainError> {
    decode_checkpoint(&std::fs::read(path).map_err(corrupt)?)
}
