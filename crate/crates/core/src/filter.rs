//! Depth-map filtering and multi-view point-cloud fusion.
//!
//! A reference pixel survives when it is confident in the reference and in at
//! least one source view (photometric test) and when enough source depth maps
//! agree with it (tiered geometric test). Depth agreement is absolute, in
//! scene units, unless the relative variant is selected.

use nalgebra::Point3;
use ndarray::{Array2, Array3, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Camera, PixelCoord, Projection, RelativeProjector};
use crate::pipeline::{run_cascade, CascadeConfig, DepthEstimate};

/// How a reprojected depth is compared with the source depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DepthTest {
    /// `|d_transformed - d_src| <= k * abs_depth_threshold`.
    Absolute,
    /// `|d_transformed - d_src| / d_src <= k * abs_depth_threshold / reference_depth`:
    /// equal to the absolute test at `reference_depth`, looser beyond it.
    Relative { reference_depth: f64 },
}

pub const TIERS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub conf_threshold: f64,
    pub reproj_px_threshold: f64,
    pub abs_depth_threshold: f64,
    /// Score contributed by a view consistent at tier 1, 2, 3, 4.
    pub dyn_view_weights: [f64; TIERS],
    pub dyn_score_threshold: f64,
    pub depth_test: DepthTest,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self::for_interval(0.5)
    }
}

impl FilterConfig {
    /// Defaults with the absolute depth threshold set to the finest interval.
    pub fn for_interval(finest_interval: f64) -> Self {
        Self {
            conf_threshold: 0.3,
            reproj_px_threshold: 1.0,
            abs_depth_threshold: finest_interval,
            dyn_view_weights: [1.0, 0.5, 0.25, 0.125],
            dyn_score_threshold: 1.5,
            depth_test: DepthTest::Absolute,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.conf_threshold) {
            return Err(Error::config("conf_threshold must be in [0, 1]"));
        }
        for (name, v) in [
            ("reproj_px_threshold", self.reproj_px_threshold),
            ("abs_depth_threshold", self.abs_depth_threshold),
            ("dyn_score_threshold", self.dyn_score_threshold),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if self.dyn_view_weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::config("dyn_view_weights must be non-negative"));
        }
        if let DepthTest::Relative { reference_depth } = self.depth_test {
            if !(reference_depth > 0.0) {
                return Err(Error::config("relative depth test needs a positive reference depth"));
            }
        }
        Ok(())
    }

    fn depth_ok(&self, transformed: f64, source: f64, tier: usize) -> bool {
        let k = tier as f64;
        let diff = (transformed - source).abs();
        match self.depth_test {
            DepthTest::Absolute => diff <= k * self.abs_depth_threshold,
            DepthTest::Relative { reference_depth } => {
                diff / source <= k * self.abs_depth_threshold / reference_depth
            }
        }
    }
}

fn check_aligned(ref_est: &DepthEstimate, src_ests: &[DepthEstimate], cams: &[Camera]) -> Result<()> {
    if cams.len() != src_ests.len() + 1 {
        return Err(Error::arg("need one camera per estimate, reference first"));
    }
    for (est, cam) in std::iter::once(ref_est).chain(src_ests).zip(cams) {
        if est.dim() != (cam.height, cam.width) {
            return Err(Error::arg("estimate does not match its camera resolution"));
        }
    }
    Ok(())
}

fn nearest_pixel(p: PixelCoord, cam: &Camera) -> Option<(usize, usize)> {
    let (x, y) = (p.u.round(), p.v.round());
    (x >= 0.0 && y >= 0.0 && x < cam.width as f64 && y < cam.height as f64).then_some((y as usize, x as usize))
}

fn confident(est: &DepthEstimate, y: usize, x: usize, threshold: f64) -> bool {
    est.valid[[y, x]] && est.confidence[[y, x]] >= threshold
}

/// Outcome of [`photometric_filter`].
#[derive(Debug, Clone, PartialEq)]
pub struct PhotometricMask {
    pub mask: Array2<bool>,
    /// No source estimates were given, so only the reference clause applied.
    pub reference_only: bool,
}

/// Keeps reference pixels that are confident themselves and land on a
/// confident pixel of at least one source view. `cams` lists the reference
/// camera first, then one camera per source estimate.
pub fn photometric_filter(
    ref_est: &DepthEstimate,
    src_ests: &[DepthEstimate],
    cams: &[Camera],
    cfg: &FilterConfig,
) -> Result<PhotometricMask> {
    check_aligned(ref_est, src_ests, cams)?;
    let projectors: Vec<_> = cams[1..].iter().map(|c| RelativeProjector::new(&cams[0], c)).collect();
    let t = cfg.conf_threshold;
    let mask = Array2::from_shape_fn(ref_est.dim(), |(y, x)| {
        if !confident(ref_est, y, x, t) {
            return false;
        }
        if src_ests.is_empty() {
            return true;
        }
        let d = ref_est.depth[[y, x]];
        projectors.iter().zip(src_ests).zip(&cams[1..]).any(|((proj, est), cam)| {
            match proj.project(x as f64, y as f64, d) {
                Projection::Visible { pixel: q, .. } => nearest_pixel(q, cam).is_some_and(|(sy, sx)| confident(est, sy, sx, t)),
                Projection::BehindCamera => false,
            }
        })
    });
    Ok(PhotometricMask {
        mask,
        reference_only: src_ests.is_empty(),
    })
}

/// Bilinear depth at a continuous coordinate, only when all four neighbours
/// are valid.
fn sample_depth(est: &DepthEstimate, q: PixelCoord) -> Option<f64> {
    const EDGE: f64 = 1e-6;
    let (h, w) = est.dim();
    let (wm, hm) = ((w - 1) as f64, (h - 1) as f64);
    if !(q.u >= -EDGE && q.v >= -EDGE && q.u <= wm + EDGE && q.v <= hm + EDGE) {
        return None;
    }
    let q = PixelCoord::new(q.u.clamp(0.0, wm), q.v.clamp(0.0, hm));
    let x0 = (q.u.floor() as usize).min(w.saturating_sub(2));
    let y0 = (q.v.floor() as usize).min(h.saturating_sub(2));
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (ax, ay) = (q.u - x0 as f64, q.v - y0 as f64);
    let mut acc = 0.0;
    for (yy, xx, wgt) in [
        (y0, x0, (1.0 - ax) * (1.0 - ay)),
        (y0, x1, ax * (1.0 - ay)),
        (y1, x0, (1.0 - ax) * ay),
        (y1, x1, ax * ay),
    ] {
        if !est.valid[[yy, xx]] {
            return None;
        }
        acc += wgt * est.depth[[yy, xx]];
    }
    Some(acc)
}

/// Per-view tier of one reference pixel against one source: the smallest
/// `k` in 1..=4 at which both the round-trip pixel error and the depth test
/// pass, or `None`.
fn view_tier(
    ref_cam: &Camera,
    src_cam: &Camera,
    src_est: &DepthEstimate,
    x: usize,
    y: usize,
    depth: f64,
    cfg: &FilterConfig,
) -> Option<usize> {
    let world = ref_cam.unproject(PixelCoord::new(x as f64, y as f64), depth);
    let (q, transformed) = src_cam.project_world(&world)?;
    let d_src = sample_depth(src_est, q)?;
    let back = src_cam.unproject(q, d_src);
    let (p, _) = ref_cam.project_world(&back)?;
    let err = p.distance(&PixelCoord::new(x as f64, y as f64));
    (1..=TIERS).find(|&k| err <= k as f64 * cfg.reproj_px_threshold && cfg.depth_ok(transformed, d_src, k))
}

/// Outcome of [`geometric_consistency`].
#[derive(Debug, Clone, PartialEq)]
pub struct GeometricCheck {
    /// `H x W x S` tier per source view, 0 when inconsistent.
    pub tiers: Array3<u8>,
    /// Number of source views consistent at any tier.
    pub consistent_views: Array2<usize>,
    pub score: Array2<f64>,
    pub mask: Array2<bool>,
}

/// Tiered multi-view depth agreement of the reference estimate.
pub fn geometric_consistency(
    ref_est: &DepthEstimate,
    src_ests: &[DepthEstimate],
    cams: &[Camera],
    cfg: &FilterConfig,
) -> Result<GeometricCheck> {
    check_aligned(ref_est, src_ests, cams)?;
    let (h, w) = ref_est.dim();
    let s = src_ests.len();
    let mut tiers = Array3::<u8>::zeros((h, w, s));
    tiers
        .outer_iter_mut()
        .into_par_iter()
        .enumerate()
        .for_each(|(y, mut row)| {
            for x in 0..w {
                if !ref_est.valid[[y, x]] {
                    continue;
                }
                let d = ref_est.depth[[y, x]];
                for (v, (est, cam)) in src_ests.iter().zip(&cams[1..]).enumerate() {
                    if let Some(k) = view_tier(&cams[0], cam, est, x, y, d, cfg) {
                        row[[x, v]] = k as u8;
                    }
                }
            }
        });
    let mut consistent_views = Array2::zeros((h, w));
    let mut score = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            for v in 0..s {
                let k = tiers[[y, x, v]] as usize;
                if k > 0 {
                    consistent_views[[y, x]] += 1;
                    score[[y, x]] += cfg.dyn_view_weights[k - 1];
                }
            }
        }
    }
    let mask = Array2::from_shape_fn((h, w), |(y, x)| {
        ref_est.valid[[y, x]] && score[[y, x]] >= cfg.dyn_score_threshold
    });
    Ok(GeometricCheck {
        tiers,
        consistent_views,
        score,
        mask,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusedPoint {
    pub position: Point3<f64>,
    pub color: [u8; 3],
    pub support: u32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FusedCloud {
    pub points: Vec<FusedPoint>,
}

impl FusedCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<Point3<f64>> {
        self.points.iter().map(|p| p.position).collect()
    }
}

fn gray(v: f32) -> [u8; 3] {
    let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    [g, g, g]
}

/// Fuses every view's surviving pixels into one cloud. Views are visited in
/// order; a surviving pixel is averaged with the tier-1 consistent, still
/// unconsumed observations of the other views, which are then consumed.
pub fn fuse_point_cloud(
    ests: &[DepthEstimate],
    masks: &[Array2<bool>],
    cams: &[Camera],
    images: &[ArrayView2<f32>],
    cfg: &FilterConfig,
) -> Result<FusedCloud> {
    let n = ests.len();
    if masks.len() != n || cams.len() != n || images.len() != n {
        return Err(Error::arg("fusion needs one estimate, mask, camera and image per view"));
    }
    for i in 0..n {
        let shape = (cams[i].height, cams[i].width);
        if ests[i].dim() != shape || masks[i].dim() != shape || images[i].dim() != shape {
            return Err(Error::arg(format!("view {i} is not aligned with its camera")));
        }
    }
    let mut consumed: Vec<Array2<bool>> = masks.iter().map(|m| Array2::from_elem(m.dim(), false)).collect();
    let mut points = Vec::new();
    for r in 0..n {
        let (h, w) = ests[r].dim();
        for y in 0..h {
            for x in 0..w {
                if !masks[r][[y, x]] || consumed[r][[y, x]] {
                    continue;
                }
                consumed[r][[y, x]] = true;
                let origin = cams[r].unproject(PixelCoord::new(x as f64, y as f64), ests[r].depth[[y, x]]);
                let mut sum = origin.coords;
                let mut support = 1u32;
                for s in (0..n).filter(|&s| s != r) {
                    let Some((q, transformed)) = cams[s].project_world(&origin) else {
                        continue;
                    };
                    let Some((sy, sx)) = nearest_pixel(q, &cams[s]) else {
                        continue;
                    };
                    if !masks[s][[sy, sx]] || consumed[s][[sy, sx]] {
                        continue;
                    }
                    let d_src = ests[s].depth[[sy, sx]];
                    let observed = cams[s].unproject(PixelCoord::new(sx as f64, sy as f64), d_src);
                    let Some((back, _)) = cams[r].project_world(&observed) else {
                        continue;
                    };
                    let err = back.distance(&PixelCoord::new(x as f64, y as f64));
                    if err <= cfg.reproj_px_threshold && cfg.depth_ok(transformed, d_src, 1) {
                        consumed[s][[sy, sx]] = true;
                        sum += observed.coords;
                        support += 1;
                    }
                }
                points.push(FusedPoint {
                    position: Point3::from(sum / support as f64),
                    color: gray(images[r][[y, x]]),
                    support,
                });
            }
        }
    }
    Ok(FusedCloud { points })
}

/// Runs the cascade once per view, each view in turn acting as reference
/// with the others as sources in their original order.
pub fn estimate_all_views(
    images: &[ArrayView2<f32>],
    cams: &[Camera],
    config: &CascadeConfig,
) -> Result<Vec<DepthEstimate>> {
    (0..images.len())
        .map(|r| {
            let (imgs, cs) = reorder(images, cams, r);
            Ok(run_cascade(&imgs, &cs, config)?.final_estimate().clone())
        })
        .collect()
}

fn reorder<'a, T: Clone>(images: &[T], cams: &[Camera], r: usize) -> (Vec<T>, Vec<Camera>) {
    let order: Vec<usize> = std::iter::once(r).chain((0..images.len()).filter(|&i| i != r)).collect();
    (
        order.iter().map(|&i| images[i].clone()).collect(),
        order.iter().map(|&i| cams[i].clone()).collect(),
    )
}

/// Per-view survival masks: photometric and geometric tests with every other
/// view as source.
pub fn filter_masks(ests: &[DepthEstimate], cams: &[Camera], cfg: &FilterConfig) -> Result<Vec<Array2<bool>>> {
    cfg.validate()?;
    if ests.len() != cams.len() {
        return Err(Error::arg("need one camera per estimate"));
    }
    (0..ests.len())
        .into_par_iter()
        .map(|r| {
            let (es, cs) = reorder(ests, cams, r);
            let photo = photometric_filter(&es[0], &es[1..], &cs, cfg)?;
            let geo = geometric_consistency(&es[0], &es[1..], &cs, cfg)?;
            Ok(&photo.mask & &geo.mask)
        })
        .collect()
}

/// Masks that keep every valid pixel.
pub fn unfiltered_masks(ests: &[DepthEstimate]) -> Vec<Array2<bool>> {
    ests.iter().map(|e| e.valid.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraIntrinsics, CameraPose};
    use crate::scene::{render_view, Primitive, SceneDefinition, Shape, Texture};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const W: usize = 40;
    const H: usize = 32;

    fn cam_at(eye: [f64; 3], target: [f64; 3]) -> Camera {
        let k = CameraIntrinsics::new(120.0, 120.0, 19.5, 15.5).unwrap();
        let pose = CameraPose::look_at(Point3::from(eye), Point3::from(target)).unwrap();
        Camera::new(k, pose, W, H).unwrap()
    }

    fn ring(z: f64) -> Vec<Camera> {
        let t = [0.0, 0.0, z];
        vec![
            cam_at([0.0, 0.0, 0.0], t),
            cam_at([30.0, 0.0, 0.0], t),
            cam_at([-30.0, 0.0, 0.0], t),
            cam_at([0.0, 30.0, 0.0], t),
            cam_at([0.0, -30.0, 0.0], t),
        ]
    }

    fn plane(z: f64) -> SceneDefinition {
        SceneDefinition::new(
            1,
            vec![Primitive {
                shape: Shape::SlantedPlane {
                    offset: z,
                    slope: 0.2,
                    x_range: [-1e4, 1e4],
                    y_range: [-1e4, 1e4],
                },
                texture: Texture::noise(0, 2.0),
            }],
        )
        .unwrap()
    }

    fn gt_estimate(scene: &SceneDefinition, cam: &Camera) -> DepthEstimate {
        let depth = render_view(scene, cam).gt_depth;
        DepthEstimate {
            valid: depth.mapv(|d| d > 0.0),
            confidence: Array2::ones(depth.dim()),
            depth,
        }
    }

    fn gt_views(z: f64) -> (Vec<DepthEstimate>, Vec<Camera>) {
        let cams = ring(z);
        let scene = plane(z);
        (cams.iter().map(|c| gt_estimate(&scene, c)).collect(), cams)
    }

    /// Deterministic pseudo-random field in [0, 1).
    fn hash01(i: usize, j: usize, salt: usize) -> f64 {
        let mut v = (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (j as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F) ^ salt as u64;
        v ^= v >> 29;
        v = v.wrapping_mul(0xBF58_476D_1CE4_E5B9);
        v ^= v >> 32;
        (v % 10_000) as f64 / 10_000.0
    }

    fn perturbed(z: f64) -> (Vec<DepthEstimate>, Vec<Camera>) {
        let (mut ests, cams) = gt_views(z);
        for (v, e) in ests.iter_mut().enumerate() {
            for ((y, x), d) in e.depth.indexed_iter_mut() {
                *d += (hash01(y, x, v) - 0.5) * 6.0;
                e.confidence[[y, x]] = hash01(x, y, v + 10);
            }
            e.valid[[3, 5]] = false;
        }
        (ests, cams)
    }

    #[test]
    fn default_config_values() {
        let c = FilterConfig::for_interval(0.5);
        assert_eq!(c.conf_threshold, 0.3);
        assert_eq!(c.reproj_px_threshold, 1.0);
        assert_eq!(c.abs_depth_threshold, 0.5);
        assert_eq!(c.dyn_view_weights, [1.0, 0.5, 0.25, 0.125]);
        assert_eq!(c.dyn_score_threshold, 1.5);
        assert!(c.validate().is_ok());
        let mut bad = c.clone();
        bad.conf_threshold = 1.5;
        assert!(bad.validate().is_err());
        let mut bad = c;
        bad.abs_depth_threshold = 0.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn full_confidence_passes_every_valid_pixel() {
        let (ests, cams) = gt_views(300.0);
        let m = photometric_filter(&ests[0], &ests[1..], &cams, &FilterConfig::default()).unwrap();
        assert!(!m.reference_only);
        assert_eq!(m.mask, ests[0].valid);
    }

    #[test]
    fn unconfident_sources_fail_clause_b() {
        let (mut ests, cams) = gt_views(300.0);
        for e in &mut ests[1..] {
            e.confidence.fill(0.0);
        }
        let m = photometric_filter(&ests[0], &ests[1..], &cams, &FilterConfig::default()).unwrap();
        assert!(m.mask.iter().all(|&b| !b));
    }

    #[test]
    fn no_sources_applies_reference_clause_only() {
        let (ests, cams) = perturbed(300.0);
        let cfg = FilterConfig::default();
        let m = photometric_filter(&ests[0], &[], &cams[..1], &cfg).unwrap();
        assert!(m.reference_only);
        for ((y, x), &b) in m.mask.indexed_iter() {
            assert_eq!(b, ests[0].valid[[y, x]] && ests[0].confidence[[y, x]] >= 0.3);
        }
    }

    #[test]
    fn photometric_mask_matches_two_clause_loop() {
        let (ests, cams) = perturbed(300.0);
        let cfg = FilterConfig::default();
        let m = photometric_filter(&ests[0], &ests[1..], &cams, &cfg).unwrap();
        let mut passed = 0;
        for y in 0..H {
            for x in 0..W {
                let r = &ests[0];
                let a = r.valid[[y, x]] && r.confidence[[y, x]] >= cfg.conf_threshold;
                let world = cams[0].unproject(PixelCoord::new(x as f64, y as f64), r.depth[[y, x]]);
                let b = (1..cams.len()).any(|s| {
                    let Some((q, _)) = cams[s].project_world(&world) else { return false };
                    let (u, v) = (q.u.round(), q.v.round());
                    if u < 0.0 || v < 0.0 || u >= W as f64 || v >= H as f64 {
                        return false;
                    }
                    let (u, v) = (u as usize, v as usize);
                    ests[s].valid[[v, u]] && ests[s].confidence[[v, u]] >= cfg.conf_threshold
                });
                assert_eq!(m.mask[[y, x]], a && b, "pixel ({x}, {y})");
                passed += (a && b) as usize;
            }
        }
        assert!(passed > 0 && passed < W * H);
    }

    #[test]
    fn duplicate_camera_is_tier_one_everywhere() {
        let (ests, cams) = gt_views(300.0);
        let dup = [cams[0], cams[0]];
        let g = geometric_consistency(&ests[0], &ests[..1], &dup, &FilterConfig::default()).unwrap();
        for ((y, x), &v) in ests[0].valid.indexed_iter() {
            if v {
                assert_eq!(g.tiers[[y, x, 0]], 1);
                assert_eq!(g.consistent_views[[y, x]], 1);
                assert_eq!(g.score[[y, x]], 1.0);
            }
        }
    }

    #[test]
    fn offset_source_is_inconsistent_at_every_tier() {
        let (ests, cams) = gt_views(300.0);
        let cfg = FilterConfig::default();
        let mut shifted = ests[0].clone();
        shifted.depth.mapv_inplace(|d| d + 10.0 * cfg.abs_depth_threshold);
        let g = geometric_consistency(&ests[0], &[shifted], &[cams[0], cams[0]], &cfg).unwrap();
        assert!(g.tiers.iter().all(|&t| t == 0));
        assert!(g.mask.iter().all(|&b| !b));
    }

    fn oracle_bilinear(e: &DepthEstimate, u: f64, v: f64) -> Option<f64> {
        if u < -1e-6 || v < -1e-6 || u > (W - 1) as f64 + 1e-6 || v > (H - 1) as f64 + 1e-6 {
            return None;
        }
        let (u, v) = (u.clamp(0.0, (W - 1) as f64), v.clamp(0.0, (H - 1) as f64));
        let x0 = (u.floor() as usize).min(W - 2);
        let y0 = (v.floor() as usize).min(H - 2);
        let (fx, fy) = (u - x0 as f64, v - y0 as f64);
        let mut acc = 0.0;
        for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
            for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                if !e.valid[[y0 + dy, x0 + dx]] {
                    return None;
                }
                acc += wy * wx * e.depth[[y0 + dy, x0 + dx]];
            }
        }
        Some(acc)
    }

    fn oracle_tier(cfg: &FilterConfig, cams: &[Camera], ests: &[DepthEstimate], s: usize, x: usize, y: usize) -> u8 {
        let d = ests[0].depth[[y, x]];
        let rel = cams[0].relative_to(&cams[s]);
        let xr = cams[0].intrinsics.backproject(PixelCoord::new(x as f64, y as f64), d);
        let xs = rel.transform(&xr);
        if xs.z <= 0.0 {
            return 0;
        }
        let k = cams[s].intrinsics.matrix() * xs;
        let (u, v) = (k.x / k.z, k.y / k.z);
        let Some(ds) = oracle_bilinear(&ests[s], u, v) else { return 0 };
        let back = rel.inverse().transform(&cams[s].intrinsics.backproject(PixelCoord::new(u, v), ds));
        let kb = cams[0].intrinsics.matrix() * back;
        let err = ((kb.x / kb.z - x as f64).powi(2) + (kb.y / kb.z - y as f64).powi(2)).sqrt();
        for t in 1..=4u8 {
            let depth_ok = match cfg.depth_test {
                DepthTest::Absolute => (xs.z - ds).abs() <= t as f64 * cfg.abs_depth_threshold,
                DepthTest::Relative { reference_depth } => {
                    (xs.z - ds).abs() / ds <= t as f64 * cfg.abs_depth_threshold / reference_depth
                }
            };
            if err <= t as f64 * cfg.reproj_px_threshold + 1e-9 && depth_ok {
                return t;
            }
        }
        0
    }

    #[test]
    fn geometric_check_matches_exhaustive_oracle() {
        let (ests, cams) = perturbed(300.0);
        for depth_test in [DepthTest::Absolute, DepthTest::Relative { reference_depth: 200.0 }] {
            let cfg = FilterConfig {
                abs_depth_threshold: 1.0,
                depth_test,
                ..FilterConfig::default()
            };
            let g = geometric_consistency(&ests[0], &ests[1..], &cams, &cfg).unwrap();
            let mut kept = 0;
            for y in 0..H {
                for x in 0..W {
                    let mut score = 0.0;
                    for s in 1..cams.len() {
                        let t = if ests[0].valid[[y, x]] { oracle_tier(&cfg, &cams, &ests, s, x, y) } else { 0 };
                        assert_eq!(g.tiers[[y, x, s - 1]], t, "pixel ({x}, {y}) view {s}");
                        if t > 0 {
                            score += cfg.dyn_view_weights[t as usize - 1];
                        }
                    }
                    assert_abs_diff_eq!(g.score[[y, x]], score);
                    let m = ests[0].valid[[y, x]] && score >= cfg.dyn_score_threshold;
                    assert_eq!(g.mask[[y, x]], m);
                    kept += m as usize;
                }
            }
            assert!(kept > 0 && kept < W * H);
        }
    }

    #[test]
    fn relative_test_passes_far_points_the_absolute_test_rejects() {
        let (mut ests, cams) = gt_views(600.0);
        for e in &mut ests[1..] {
            e.depth.mapv_inplace(|d| d + 1.8);
        }
        let abs = FilterConfig::default();
        let rel = FilterConfig {
            depth_test: DepthTest::Relative { reference_depth: 150.0 },
            ..abs.clone()
        };
        let a = geometric_consistency(&ests[0], &ests[1..], &cams, &abs).unwrap();
        let r = geometric_consistency(&ests[0], &ests[1..], &cams, &rel).unwrap();
        let na = a.mask.iter().filter(|&&b| b).count();
        let nr = r.mask.iter().filter(|&&b| b).count();
        assert_eq!(na, 0);
        assert!(nr > W * H / 2, "{nr}");
    }

    #[test]
    fn out_of_bounds_reprojection_is_inconsistent() {
        let (ests, _) = gt_views(300.0);
        let far = cam_at([400.0, 0.0, 0.0], [800.0, 0.0, 300.0]);
        let cams = [ring(300.0)[0], far];
        let g = geometric_consistency(&ests[0], &ests[..1], &cams, &FilterConfig::default()).unwrap();
        assert!(g.tiers.iter().all(|&t| t == 0));
    }

    #[test]
    fn single_view_fuses_exact_backprojections() {
        let (ests, cams) = gt_views(300.0);
        let img = Array2::from_elem((H, W), 0.5f32);
        let cloud = fuse_point_cloud(
            &ests[..1],
            &unfiltered_masks(&ests[..1]),
            &cams[..1],
            &[img.view()],
            &FilterConfig::default(),
        )
        .unwrap();
        assert_eq!(cloud.len(), W * H);
        for (i, p) in cloud.points.iter().enumerate() {
            let (y, x) = (i / W, i % W);
            let expect = cams[0].unproject(PixelCoord::new(x as f64, y as f64), ests[0].depth[[y, x]]);
            assert_abs_diff_eq!((p.position - expect).norm(), 0.0, epsilon = 1e-9);
            assert_eq!(p.support, 1);
            assert_eq!(p.color, [128, 128, 128]);
        }
    }

    #[test]
    fn identical_views_fuse_with_support_two() {
        let (ests, cams) = gt_views(300.0);
        let pair = [ests[0].clone(), ests[0].clone()];
        let img = Array2::from_elem((H, W), 1.0f32);
        let cloud = fuse_point_cloud(
            &pair,
            &unfiltered_masks(&pair),
            &[cams[0], cams[0]],
            &[img.view(), img.view()],
            &FilterConfig::default(),
        )
        .unwrap();
        assert_eq!(cloud.len(), W * H);
        for (i, p) in cloud.points.iter().enumerate() {
            let (y, x) = (i / W, i % W);
            let expect = cams[0].unproject(PixelCoord::new(x as f64, y as f64), ests[0].depth[[y, x]]);
            assert_abs_diff_eq!((p.position - expect).norm(), 0.0, epsilon = 1e-9);
            assert_eq!(p.support, 2);
        }
    }

    #[test]
    fn empty_masks_give_empty_cloud() {
        let (ests, cams) = gt_views(300.0);
        let masks: Vec<_> = ests.iter().map(|e| Array2::from_elem(e.dim(), false)).collect();
        let imgs: Vec<_> = ests.iter().map(|e| e.depth.mapv(|_| 0.0f32)).collect();
        let views: Vec<_> = imgs.iter().map(|i| i.view()).collect();
        let cloud = fuse_point_cloud(&ests, &masks, &cams, &views, &FilterConfig::default()).unwrap();
        assert!(cloud.is_empty());
    }

    #[test]
    fn fused_gt_ring_lies_on_the_plane() {
        let (ests, cams) = gt_views(300.0);
        let cfg = FilterConfig::default();
        let masks = filter_masks(&ests, &cams, &cfg).unwrap();
        let imgs: Vec<_> = ests.iter().map(|e| e.depth.mapv(|_| 0.0f32)).collect();
        let views: Vec<_> = imgs.iter().map(|i| i.view()).collect();
        let cloud = fuse_point_cloud(&ests, &masks, &cams, &views, &cfg).unwrap();
        assert!(cloud.len() > W * H / 2);
        for p in &cloud.points {
            let on_plane = 300.0 + 0.2 * p.position.x;
            assert!((p.position.z - on_plane).abs() < 1e-6);
            assert!(p.support >= 1);
        }
    }

    fn kept(masks: &[Array2<bool>]) -> Vec<(usize, usize, usize)> {
        masks
            .iter()
            .enumerate()
            .flat_map(|(v, m)| m.indexed_iter().filter(|(_, &b)| b).map(move |((y, x), _)| (v, y, x)))
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn tightening_never_adds_survivors(c0 in 0.0f64..0.6, dc in 0.0f64..0.4, s0 in 0.5f64..2.0, ds in 0.0f64..1.5) {
            let (ests, cams) = perturbed(300.0);
            let loose = FilterConfig { conf_threshold: c0, dyn_score_threshold: s0, abs_depth_threshold: 1.0, ..FilterConfig::default() };
            let tight = FilterConfig { conf_threshold: c0 + dc, dyn_score_threshold: s0 + ds, ..loose.clone() };
            let a = kept(&filter_masks(&ests, &cams, &loose).unwrap());
            let b = kept(&filter_masks(&ests, &cams, &tight).unwrap());
            let set: std::collections::HashSet<_> = a.iter().collect();
            prop_assert!(b.iter().all(|p| set.contains(p)));
        }

        #[test]
        fn decisions_are_invariant_under_joint_rescaling(k in -3i32..4, salt in 0usize..50) {
            let s = 2f64.powi(k);
            let (mut ests, cams) = perturbed(300.0);
            for (v, e) in ests.iter_mut().enumerate() {
                e.depth.mapv_inplace(|d| d + (hash01(v, salt, 7) - 0.5));
            }
            let cfg = FilterConfig { abs_depth_threshold: 1.0, ..FilterConfig::default() };
            let scaled_cams: Vec<_> = cams
                .iter()
                .map(|c| Camera::new(c.intrinsics, CameraPose::new(*c.pose.rotation(), c.pose.translation() * s).unwrap(), W, H).unwrap())
                .collect();
            let scaled_ests: Vec<_> = ests
                .iter()
                .map(|e| DepthEstimate { depth: e.depth.mapv(|d| d * s), ..e.clone() })
                .collect();
            let scaled_cfg = FilterConfig { abs_depth_threshold: s, ..cfg.clone() };
            let a = geometric_consistency(&ests[0], &ests[1..], &cams, &cfg).unwrap();
            let b = geometric_consistency(&scaled_ests[0], &scaled_ests[1..], &scaled_cams, &scaled_cfg).unwrap();
            prop_assert_eq!(a.tiers, b.tiers);
            prop_assert_eq!(a.mask, b.mask);
            let pa = photometric_filter(&ests[0], &ests[1..], &cams, &cfg).unwrap();
            let pb = photometric_filter(&scaled_ests[0], &scaled_ests[1..], &scaled_cams, &scaled_cfg).unwrap();
            prop_assert_eq!(pa.mask, pb.mask);
        }
    }
}
