//! Single-channel PFM: `Pf` header, negative scale for little-endian, rows
//! stored bottom to top.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

fn bad(msg: impl Into<String>) -> Error {
    Error::format("pfm", msg)
}

pub fn encode_pfm(map: ArrayView2<f32>) -> Vec<u8> {
    let (h, w) = map.dim();
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(4 * w * h);
    for row in map.outer_iter().rev() {
        for &v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Splits off one whitespace-delimited header token.
fn token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(bad("truncated header"));
    }
    std::str::from_utf8(&bytes[start..*pos]).map_err(|_| bad("header is not text"))
}

pub fn decode_pfm(bytes: &[u8]) -> Result<Array2<f32>> {
    let mut pos = 0;
    match token(bytes, &mut pos)? {
        "Pf" => {}
        "PF" => return Err(bad("three-channel PFM is not supported")),
        other => return Err(bad(format!("unknown magic '{other}'"))),
    }
    let w: usize = token(bytes, &mut pos)?.parse().map_err(|_| bad("bad width"))?;
    let h: usize = token(bytes, &mut pos)?.parse().map_err(|_| bad("bad height"))?;
    let scale: f64 = token(bytes, &mut pos)?.parse().map_err(|_| bad("bad scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(bad("scale must be non-zero"));
    }
    // Exactly one whitespace byte separates the header from the data.
    pos += 1;
    let data = bytes.get(pos..).ok_or_else(|| bad("missing data"))?;
    if data.len() != 4 * w * h {
        return Err(bad(format!("expected {} data bytes, found {}", 4 * w * h, data.len())));
    }
    let little = scale < 0.0;
    let mut out = Array2::zeros((h, w));
    for (i, chunk) in data.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        out[[h - 1 - i / w, i % w]] = v;
    }
    Ok(out)
}

pub fn write_pfm(path: impl AsRef<Path>, map: ArrayView2<f32>) -> Result<()> {
    Ok(fs::write(path, encode_pfm(map))?)
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<Array2<f32>> {
    decode_pfm(&fs::read(path)?)
}
