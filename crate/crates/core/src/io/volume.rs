//! Raw volume dump for inspection tools.
//!
//! Layout, all little-endian: magic `LMVSVOL1`, `u32` rank (4), `u32` dims
//! `H W D V`, `V` x `u32` channel order (source ids), then `H*W*D*V` f32 values
//! in row-major order followed by as many validity bytes (0 or 1).

use std::fs;
use std::path::Path;

use ndarray::{Array4, Axis};

use crate::cost::{CostVolume, PairwiseCostVolume, ViewPreservedCost};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"LMVSVOL1";

fn bad(msg: impl Into<String>) -> Error {
    Error::format("volume", msg)
}

pub fn encode_volume(v: &ViewPreservedCost) -> Vec<u8> {
    let (h, w, d, c) = v.dim();
    let mut out = MAGIC.to_vec();
    for n in [4, h, w, d, c] {
        out.extend_from_slice(&(n as u32).to_le_bytes());
    }
    for &id in &v.channel_order {
        out.extend_from_slice(&(id as u32).to_le_bytes());
    }
    for x in v.values.iter() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out.extend(v.valid.iter().map(|&b| b as u8));
    out
}

pub fn decode_volume(bytes: &[u8]) -> Result<ViewPreservedCost> {
    if bytes.len() < 28 || &bytes[..8] != MAGIC {
        return Err(bad("missing magic"));
    }
    let word = |i: usize| -> Result<usize> {
        bytes
            .get(8 + 4 * i..12 + 4 * i)
            .map(|b| u32::from_le_bytes(b.try_into().expect("four bytes")) as usize)
            .ok_or_else(|| bad("truncated header"))
    };
    if word(0)? != 4 {
        return Err(bad("only rank-4 volumes are stored"));
    }
    let (h, w, d, c) = (word(1)?, word(2)?, word(3)?, word(4)?);
    let channel_order = (0..c).map(|k| word(5 + k)).collect::<Result<Vec<_>>>()?;
    let n = h * w * d * c;
    let start = 8 + 4 * (5 + c);
    if bytes.len() != start + 5 * n {
        return Err(bad("payload length does not match the dimensions"));
    }
    let values = bytes[start..start + 4 * n]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("four bytes")))
        .collect();
    let valid = bytes[start + 4 * n..].iter().map(|&b| b != 0).collect();
    let shape = (h, w, d, c);
    Ok(ViewPreservedCost {
        values: Array4::from_shape_vec(shape, values).map_err(|e| bad(e.to_string()))?,
        valid: Array4::from_shape_vec(shape, valid).map_err(|e| bad(e.to_string()))?,
        channel_order,
    })
}

/// Wraps a single volume as a one-channel dump.
pub fn single_channel(v: &CostVolume, source_id: usize) -> ViewPreservedCost {
    ViewPreservedCost {
        values: v.values.clone().insert_axis(Axis(3)),
        valid: v.valid.clone().insert_axis(Axis(3)),
        channel_order: vec![source_id],
    }
}

pub fn pairwise_dump(v: &PairwiseCostVolume) -> ViewPreservedCost {
    single_channel(&v.volume, v.source_id)
}

pub fn write_volume(path: impl AsRef<Path>, v: &ViewPreservedCost) -> Result<()> {
    Ok(fs::write(path, encode_volume(v))?)
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<ViewPreservedCost> {
    decode_volume(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_keeps_values_mask_and_order() {
        let v = ViewPreservedCost {
            values: Array4::from_shape_fn((2, 3, 4, 2), |(y, x, d, c)| (y * 100 + x * 10 + d) as f32 - c as f32 * 0.5),
            valid: Array4::from_shape_fn((2, 3, 4, 2), |(y, x, d, _)| (y + x + d) % 3 != 0),
            channel_order: vec![3, 1],
        };
        let b = encode_volume(&v);
        assert_eq!(b.len(), 8 + 4 * 7 + 5 * 48);
        let back = decode_volume(&b).unwrap();
        assert_eq!(back.values, v.values);
        assert_eq!(back.valid, v.valid);
        assert_eq!(back.channel_order, v.channel_order);
        assert!(decode_volume(&b[..b.len() - 1]).is_err());
    }

    #[test]
    fn single_volume_becomes_one_channel() {
        let cv = CostVolume::zeros((2, 2, 3));
        let d = single_channel(&cv, 4);
        assert_eq!(d.dim(), (2, 2, 3, 1));
        assert_eq!(d.channel_order, vec![4]);
    }
}
