//! Minimal raw pixel format for desk-scale instances.
//!
//! One instance is one slice: `"RAW1" | u32 rows | u32 cols | rows·cols × u16`
//! (little-endian). A volume is the concatenation of its instances.

use super::{IngestError, RawImage};

pub const RAW_MAGIC: &[u8; 4] = b"RAW1";

pub fn encode_slice(rows: usize, cols: usize, pixels: &[u16]) -> Vec<u8> {
    assert_eq!(rows * cols, pixels.len());
    let mut out = Vec::with_capacity(12 + 2 * pixels.len());
    out.extend_from_slice(RAW_MAGIC);
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    for p in pixels {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn decode_volume(mut bytes: &[u8]) -> Result<Vec<RawImage>, IngestError> {
    let mut slices = Vec::new();
    while !bytes.is_empty() {
        if bytes.len() < 12 || &bytes[..4] != RAW_MAGIC {
            return Err(IngestError::Format("bad RAW1 header".into()));
        }
        let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let end = 12 + 2 * rows * cols;
        if bytes.len() < end {
            return Err(IngestError::Format("truncated RAW1 payload".into()));
        }
        let pixels = bytes[12..end].chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]]) as f64).collect();
        slices.push(RawImage { height: rows, width: cols, pixels });
        bytes = &bytes[end..];
    }
    Ok(slices)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concatenated_instances_decode() {
        let mut vol = encode_slice(2, 3, &[0, 1, 2, 3, 4, 5]);
        vol.extend(encode_slice(1, 1, &[4095]));
        let slices = decode_volume(&vol).unwrap();
        assert_eq!(slices.len(), 2);
        assert_eq!((slices[0].height, slices[0].width), (2, 3));
        assert_eq!(slices[0].pixels[5], 5.0);
        assert_eq!(slices[1].pixels, vec![4095.0]);
        assert!(decode_volume(&vol[..vol.len() - 1]).is_err());
    }
}
