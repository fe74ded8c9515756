//! Text camera records:
//!
//! ```text
//! extrinsic
//! r11 r12 r13 t1
//! r21 r22 r23 t2
//! r31 r32 r33 t3
//! 0 0 0 1
//!
//! intrinsic
//! fx 0 cx
//! 0 fy cy
//! 0 0 1
//!
//! d_min d_interval
//! ```
//!
//! The extrinsic is world to camera. Image size is not part of the record.

use std::fmt::Write;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Matrix4, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{Camera, CameraIntrinsics, CameraPose};

fn bad(msg: impl Into<String>) -> Error {
    Error::format("cam", msg)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CamRecord {
    pub camera: Camera,
    /// `(d_min, d_interval)` when the record has a depth line.
    pub depth_range: Option<(f64, f64)>,
}

pub fn format_cam(cam: &Camera, depth_range: Option<(f64, f64)>) -> String {
    let m = cam.pose.to_matrix4();
    let k = cam.intrinsics.matrix();
    let mut s = String::from("extrinsic\n");
    for r in 0..4 {
        let _ = writeln!(s, "{} {} {} {}", m[(r, 0)], m[(r, 1)], m[(r, 2)], m[(r, 3)]);
    }
    s.push_str("\nintrinsic\n");
    for r in 0..3 {
        let _ = writeln!(s, "{} {} {}", k[(r, 0)], k[(r, 1)], k[(r, 2)]);
    }
    if let Some((d_min, interval)) = depth_range {
        let _ = writeln!(s, "\n{d_min} {interval}");
    }
    s
}

/// Parses a record. The rotation is re-orthonormalised, since text round-off
/// leaves it slightly off SO(3).
pub fn parse_cam(text: &str, width: usize, height: usize) -> Result<CamRecord> {
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.len() < 27 || words[0] != "extrinsic" || words[17] != "intrinsic" {
        return Err(bad("record needs an extrinsic 4x4 and an intrinsic 3x3 block"));
    }
    let nums: Vec<f64> = words[1..17]
        .iter()
        .chain(&words[18..])
        .map(|w| w.parse::<f64>().map_err(|_| bad(format!("bad number '{w}'"))))
        .collect::<Result<_>>()?;
    let e = Matrix4::from_row_slice(&nums[..16]);
    let k = Matrix3::from_row_slice(&nums[16..25]);
    let depth_range = match &nums[25..] {
        [] => None,
        [d, i, ..] => Some((*d, *i)),
        _ => return Err(bad("depth line needs d_min and d_interval")),
    };
    let rot = e.fixed_view::<3, 3>(0, 0).into_owned();
    let t = Vector3::new(e[(0, 3)], e[(1, 3)], e[(2, 3)]);
    let pose = CameraPose::new_orthonormalized(rot, t)?;
    let camera = Camera::new(CameraIntrinsics::from_matrix(&k)?, pose, width, height)?;
    Ok(CamRecord { camera, depth_range })
}

pub fn write_cam(path: impl AsRef<Path>, cam: &Camera, depth_range: Option<(f64, f64)>) -> Result<()> {
    Ok(fs::write(path, format_cam(cam, depth_range))?)
}

pub fn read_cam(path: impl AsRef<Path>, width: usize, height: usize) -> Result<CamRecord> {
    parse_cam(&fs::read_to_string(path)?, width, height)
}
