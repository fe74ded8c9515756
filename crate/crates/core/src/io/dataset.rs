//! Directory layout shared by the CLI subcommands:
//!
//! ```text
//! images/00000000.pgm      reference first
//! cams/00000000_cam.txt
//! gt/00000000.pfm          ground-truth depth, 0 where nothing was hit
//! depth/00000000.pfm       estimated depth, 0 where invalid
//! confidence/00000000.pfm
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::{cam, image, pfm};
use crate::error::{Error, Result};
use crate::geometry::Camera;
use crate::pipeline::DepthEstimate;
use crate::scene::RenderedView;

fn file(dir: &Path, sub: &str, index: usize, suffix: &str) -> PathBuf {
    dir.join(sub).join(format!("{index:08}{suffix}"))
}

fn count_files(dir: &Path) -> Result<usize> {
    if !dir.is_dir() {
        return Ok(0);
    }
    Ok(fs::read_dir(dir)?.filter_map(|e| e.ok()).filter(|e| e.path().is_file()).count())
}

/// Views of one scene as loaded from disk.
#[derive(Debug, Clone)]
pub struct ViewSet {
    pub images: Vec<Array2<f32>>,
    pub cameras: Vec<Camera>,
    /// Per-camera depth range from the camera records, when present.
    pub depth_ranges: Vec<Option<(f64, f64)>>,
    /// Empty when the directory has no ground truth.
    pub gt_depth: Vec<Array2<f64>>,
}

impl ViewSet {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn has_gt(&self) -> bool {
        !self.gt_depth.is_empty()
    }
}

pub fn write_views(dir: impl AsRef<Path>, views: &[RenderedView], depth_range: Option<(f64, f64)>) -> Result<()> {
    let dir = dir.as_ref();
    for sub in ["images", "cams", "gt"] {
        fs::create_dir_all(dir.join(sub))?;
    }
    for (i, v) in views.iter().enumerate() {
        image::write_pgm(file(dir, "images", i, ".pgm"), v.image.view())?;
        cam::write_cam(file(dir, "cams", i, "_cam.txt"), &v.camera, depth_range)?;
        pfm::write_pfm(file(dir, "gt", i, ".pfm"), v.gt_depth.mapv(|d| d as f32).view())?;
    }
    Ok(())
}

pub fn read_views(dir: impl AsRef<Path>) -> Result<ViewSet> {
    let dir = dir.as_ref();
    let n = count_files(&dir.join("images"))?;
    if n == 0 {
        return Err(Error::arg(format!("no images under {}", dir.join("images").display())));
    }
    let mut set = ViewSet {
        images: Vec::with_capacity(n),
        cameras: Vec::with_capacity(n),
        depth_ranges: Vec::with_capacity(n),
        gt_depth: Vec::new(),
    };
    for i in 0..n {
        let img = image::read_gray(file(dir, "images", i, ".pgm"))?;
        let (h, w) = img.dim();
        let rec = cam::read_cam(file(dir, "cams", i, "_cam.txt"), w, h)?;
        set.images.push(img);
        set.cameras.push(rec.camera);
        set.depth_ranges.push(rec.depth_range);
    }
    if count_files(&dir.join("gt"))? == n {
        for i in 0..n {
            let gt = pfm::read_pfm(file(dir, "gt", i, ".pfm"))?;
            if gt.dim() != set.images[i].dim() {
                return Err(Error::format("pfm", format!("ground truth {i} does not match its image")));
            }
            set.gt_depth.push(gt.mapv(|d| d as f64));
        }
    }
    Ok(set)
}

pub fn write_estimate(dir: impl AsRef<Path>, index: usize, est: &DepthEstimate) -> Result<()> {
    let dir = dir.as_ref();
    for sub in ["depth", "confidence"] {
        fs::create_dir_all(dir.join(sub))?;
    }
    let depth = Array2::from_shape_fn(est.dim(), |ix| if est.valid[ix] { est.depth[ix] as f32 } else { 0.0 });
    pfm::write_pfm(file(dir, "depth", index, ".pfm"), depth.view())?;
    pfm::write_pfm(file(dir, "confidence", index, ".pfm"), est.confidence.mapv(|c| c as f32).view())
}

pub fn read_estimate(dir: impl AsRef<Path>, index: usize) -> Result<DepthEstimate> {
    let dir = dir.as_ref();
    let depth = pfm::read_pfm(file(dir, "depth", index, ".pfm"))?;
    let confidence = pfm::read_pfm(file(dir, "confidence", index, ".pfm"))?;
    if depth.dim() != confidence.dim() {
        return Err(Error::format("pfm", "depth and confidence differ in size"));
    }
    Ok(DepthEstimate {
        valid: depth.mapv(|d| d > 0.0 && d.is_finite()),
        depth: depth.mapv(|d| d as f64),
        confidence: confidence.mapv(|c| c as f64),
    })
}

/// Number of estimates stored under `dir`.
pub fn estimate_count(dir: impl AsRef<Path>) -> Result<usize> {
    count_files(&dir.as_ref().join("depth"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::clean_suite;

    #[test]
    fn views_round_trip_through_a_directory() {
        let mut s = clean_suite().unwrap().remove(0);
        s.rig.width = 24;
        s.rig.height = 16;
        s.rig.source_margin = 2;
        let views = s.render().unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_views(dir.path(), &views, Some((425.0, 4.0))).unwrap();
        let set = read_views(dir.path()).unwrap();
        assert_eq!(set.len(), 5);
        assert!(set.has_gt());
        for (v, (c, g)) in views.iter().zip(set.cameras.iter().zip(&set.gt_depth)) {
            assert_eq!((c.width, c.height), (v.camera.width, v.camera.height));
            assert!((c.pose.to_matrix4() - v.camera.pose.to_matrix4()).amax() < 1e-9);
            assert!(g.iter().zip(v.gt_depth.iter()).all(|(a, b)| (a - b).abs() < 1e-3));
        }
        assert_eq!(set.depth_ranges[0], Some((425.0, 4.0)));
    }

    #[test]
    fn estimates_encode_invalid_as_zero() {
        let est = DepthEstimate {
            depth: Array2::from_elem((2, 2), 500.0),
            confidence: Array2::from_elem((2, 2), 0.5),
            valid: Array2::from_shape_vec((2, 2), vec![true, false, true, true]).unwrap(),
        };
        let dir = tempfile::tempdir().unwrap();
        write_estimate(dir.path(), 3, &est).unwrap();
        let back = read_estimate(dir.path(), 3).unwrap();
        assert_eq!(back.valid, est.valid);
        assert_eq!(back.depth[[1, 0]], 500.0);
        assert_eq!(back.depth[[0, 1]], 0.0);
        assert_eq!(back.confidence[[0, 0]], 0.5);
    }
}
