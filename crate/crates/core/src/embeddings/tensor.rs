//! `EMB1` binary tensor framing.
//!
//! ```text
//! "EMB1" | u16 version | u16 rank | rank × u32 dims | payload (little-endian)
//! ```
//!
//! Version 1 carries an `f32` payload. Version 2 carries `f64` and is only
//! used by training checkpoints.

use super::EmbedError;

pub const TENSOR_MAGIC: &[u8; 4] = b"EMB1";
const VERSION_F32: u16 = 1;
const VERSION_F64: u16 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self, EmbedError> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(EmbedError::DimMismatch { expected, got: data.len() });
        }
        Ok(Self { dims, data })
    }
}

fn header(out: &mut Vec<u8>, version: u16, dims: &[usize]) {
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(dims.len() as u16).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
}

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * t.dims.len() + 4 * t.data.len());
    header(&mut out, VERSION_F32, &t.dims);
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub(crate) fn encode_f64_block(dims: &[usize], data: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * dims.len() + 8 * data.len());
    header(&mut out, VERSION_F64, dims);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Header {
    version: u16,
    dims: Vec<usize>,
    payload_at: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header, EmbedError> {
    let bad = |m: &str| EmbedError::CorruptHeader(m.to_string());
    if bytes.len() < 8 {
        return Err(bad("truncated header"));
    }
    if &bytes[..4] != TENSOR_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION_F32 && version != VERSION_F64 {
        return Err(EmbedError::CorruptHeader(format!("unsupported version {version}")));
    }
    let rank = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let payload_at = 8 + 4 * rank;
    if bytes.len() < payload_at {
        return Err(bad("truncated dims"));
    }
    let dims =
        bytes[8..payload_at].chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize).collect();
    Ok(Header { version, dims, payload_at })
}

/// Decode one `f32` tensor occupying the whole buffer.
pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor, EmbedError> {
    let h = parse_header(bytes)?;
    if h.version != VERSION_F32 {
        return Err(EmbedError::CorruptHeader(format!("expected f32 payload, version {}", h.version)));
    }
    let count: usize = h.dims.iter().product();
    let payload = &bytes[h.payload_at..];
    if payload.len() != 4 * count {
        return Err(EmbedError::CorruptHeader(format!(
            "dims imply {} payload bytes, found {}",
            4 * count,
            payload.len()
        )));
    }
    let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok(Tensor { dims: h.dims, data })
}

/// Decode one `f64` block from the front of `bytes`, returning it and the
/// number of bytes consumed.
pub(crate) fn decode_f64_block(bytes: &[u8]) -> Result<(Vec<usize>, Vec<f64>, usize), EmbedError> {
    let h = parse_header(bytes)?;
    if h.version != VERSION_F64 {
        return Err(EmbedError::CorruptHeader(format!("expected f64 block, version {}", h.version)));
    }
    let count: usize = h.dims.iter().product();
    let end = h.payload_at + 8 * count;
    if bytes.len() < end {
        return Err(EmbedError::CorruptHeader("truncated f64 payload".into()));
    }
    let data = bytes[h.payload_at..end].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((h.dims, data, end))
}
