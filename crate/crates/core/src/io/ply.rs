//! PLY point clouds: `x y z` as float, `red green blue` as uchar.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::Point3;

use crate::error::{Error, Result};
use crate::filter::{FusedCloud, FusedPoint};

fn bad(msg: impl Into<String>) -> Error {
    Error::format("ply", msg)
}

pub fn encode_ply(cloud: &FusedCloud, ascii: bool) -> Vec<u8> {
    let format = if ascii { "ascii" } else { "binary_little_endian" };
    let mut out = format!(
        "ply\nformat {format} 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        cloud.len()
    )
    .into_bytes();
    for p in &cloud.points {
        let [x, y, z] = [p.position.x as f32, p.position.y as f32, p.position.z as f32];
        if ascii {
            let [r, g, b] = p.color;
            writeln!(out, "{x} {y} {z} {r} {g} {b}").expect("writing to a vector");
        } else {
            for v in [x, y, z] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&p.color);
        }
    }
    out
}

/// Reads back what [`encode_ply`] writes. Support counts are not stored and
/// come back as 1.
pub fn decode_ply(bytes: &[u8]) -> Result<FusedCloud> {
    let end = b"end_header\n";
    let split = bytes
        .windows(end.len())
        .position(|w| w == end)
        .ok_or_else(|| bad("missing end_header"))?
        + end.len();
    let header = std::str::from_utf8(&bytes[..split]).map_err(|_| bad("header is not text"))?;
    let mut lines = header.lines();
    if lines.next() != Some("ply") {
        return Err(bad("missing magic"));
    }
    let mut ascii = None;
    let mut count = None;
    let mut props = Vec::new();
    for line in lines {
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.as_slice() {
            ["format", "ascii", _] => ascii = Some(true),
            ["format", "binary_little_endian", _] => ascii = Some(false),
            ["format", other, _] => return Err(bad(format!("unsupported format {other}"))),
            ["element", "vertex", n] => count = Some(n.parse::<usize>().map_err(|_| bad("bad vertex count"))?),
            ["property", ty, name] => props.push(format!("{ty} {name}")),
            _ => {}
        }
    }
    let expected = [
        "float x",
        "float y",
        "float z",
        "uchar red",
        "uchar green",
        "uchar blue",
    ];
    if props != expected {
        return Err(bad("unexpected vertex properties"));
    }
    let ascii = ascii.ok_or_else(|| bad("missing format"))?;
    let count = count.ok_or_else(|| bad("missing vertex element"))?;
    let body = &bytes[split..];
    let point = |xyz: [f32; 3], color: [u8; 3]| FusedPoint {
        position: Point3::new(xyz[0] as f64, xyz[1] as f64, xyz[2] as f64),
        color,
        support: 1,
    };
    let mut points = Vec::with_capacity(count);
    if ascii {
        let text = std::str::from_utf8(body).map_err(|_| bad("body is not text"))?;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 6 {
                return Err(bad("vertex line needs six fields"));
            }
            let num = |s: &str| s.parse::<f32>().map_err(|_| bad("bad coordinate"));
            let byte = |s: &str| s.parse::<u8>().map_err(|_| bad("bad colour"));
            points.push(point([num(f[0])?, num(f[1])?, num(f[2])?], [byte(f[3])?, byte(f[4])?, byte(f[5])?]));
        }
    } else {
        if body.len() != 15 * count {
            return Err(bad("binary body length does not match the vertex count"));
        }
        for rec in body.chunks_exact(15) {
            let f = |i: usize| f32::from_le_bytes(rec[4 * i..4 * i + 4].try_into().expect("four bytes"));
            points.push(point([f(0), f(1), f(2)], [rec[12], rec[13], rec[14]]));
        }
    }
    if points.len() != count {
        return Err(bad("vertex count mismatch"));
    }
    Ok(FusedCloud { points })
}

pub fn write_ply(path: impl AsRef<Path>, cloud: &FusedCloud, ascii: bool) -> Result<()> {
    Ok(fs::write(path, encode_ply(cloud, ascii))?)
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<FusedCloud> {
    decode_ply(&fs::read(path)?)
}
