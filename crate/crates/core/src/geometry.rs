//! Pinhole cameras, reference-to-source reprojection at a hypothesised depth
//! and bilinear feature warping.
//!
//! Pixel coordinates follow the pixel-centre convention: the centre of the
//! top-left pixel is `(0, 0)` and `u` runs along columns.

use nalgebra::{Matrix3, Matrix4, Point3, Vector3};
use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};

const ROTATION_TOLERANCE: f64 = 1e-9;

/// Pinhole intrinsics `K = [[fx, 0, cx], [0, fy, cy], [0, 0, 1]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) || !cx.is_finite() || !cy.is_finite() {
            return Err(Error::arg(format!(
                "intrinsics need positive focal lengths, got fx={fx} fy={fy}"
            )));
        }
        Ok(Self { fx, fy, cx, cy })
    }

    /// Builds intrinsics from a 3x3 matrix, rejecting skew and a bad bottom row.
    pub fn from_matrix(k: &Matrix3<f64>) -> Result<Self> {
        let lower = [k[(1, 0)], k[(2, 0)], k[(2, 1)]];
        if lower.iter().any(|v| v.abs() > 1e-12) || (k[(2, 2)] - 1.0).abs() > 1e-12 {
            return Err(Error::arg("intrinsic matrix must be upper-triangular with bottom row (0,0,1)"));
        }
        if k[(0, 1)].abs() > 1e-12 {
            return Err(Error::arg("skewed intrinsics are not supported"));
        }
        Self::new(k[(0, 0)], k[(1, 1)], k[(0, 2)], k[(1, 2)])
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Intrinsics of the same camera sampled on a grid scaled by `scale`
    /// (e.g. `0.25` for a quarter-resolution grid built by area averaging).
    pub fn scaled(&self, scale: f64) -> Self {
        Self {
            fx: self.fx * scale,
            fy: self.fy * scale,
            cx: (self.cx + 0.5) * scale - 0.5,
            cy: (self.cy + 0.5) * scale - 0.5,
        }
    }

    /// Camera-frame point at depth `depth` along the ray of pixel `p`.
    pub fn backproject(&self, p: PixelCoord, depth: f64) -> Vector3<f64> {
        Vector3::new(
            (p.u - self.cx) / self.fx * depth,
            (p.v - self.cy) / self.fy * depth,
            depth,
        )
    }

    /// Perspective projection; `None` when the point is not in front of the camera.
    pub fn project(&self, x: &Vector3<f64>) -> Option<PixelCoord> {
        if x.z <= 0.0 {
            return None;
        }
        Some(PixelCoord::new(
            self.fx * x.x / x.z + self.cx,
            self.fy * x.y / x.z + self.cy,
        ))
    }
}

/// Rigid transform `x' = R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl CameraPose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if ortho > ROTATION_TOLERANCE || (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(Error::arg(format!(
                "not a rotation: |RᵀR - I| = {ortho:e}, det = {det}"
            )));
        }
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("translation must be finite"));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Like [`CameraPose::new`] but first projects a nearly-orthonormal matrix
    /// onto SO(3). Text camera files rarely carry enough digits for the strict
    /// check; anything further than `1e-3` from a rotation is still rejected.
    pub fn new_orthonormalized(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if ortho > 1e-3 || rotation.determinant() <= 0.0 {
            return Err(Error::arg("rotation block is not close to a rotation matrix"));
        }
        let svd = rotation.svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut r = u * v_t;
        if r.determinant() < 0.0 {
            let mut u = u;
            u.column_mut(2).neg_mut();
            r = u * v_t;
        }
        Self::new(r, translation)
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// World-to-camera pose of a camera at `eye` looking at `target`, with
    /// image rows increasing along world `+y`.
    pub fn look_at(eye: Point3<f64>, target: Point3<f64>) -> Result<Self> {
        let forward = target - eye;
        if forward.norm() == 0.0 {
            return Err(Error::arg("look_at target coincides with the eye"));
        }
        let z = forward.normalize();
        let down = Vector3::new(0.0, 1.0, 0.0);
        let x = down.cross(&z);
        if x.norm() < 1e-12 {
            return Err(Error::arg("look_at direction is parallel to the image-down axis"));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let translation = -(rotation * eye.coords);
        Self::new(rotation, translation)
    }

    pub fn from_matrix4(m: &Matrix4<f64>) -> Result<Self> {
        let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)] - 1.0];
        if bottom.iter().any(|v| v.abs() > 1e-9) {
            return Err(Error::arg("extrinsic matrix bottom row must be (0,0,0,1)"));
        }
        let r = m.fixed_view::<3, 3>(0, 0).into_owned();
        let t = m.fixed_view::<3, 1>(0, 3).into_owned();
        Self::new_orthonormalized(r, t)
    }

    pub fn to_matrix4(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &CameraPose) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn transform(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }
}

/// A calibrated view: intrinsics, world-to-camera pose and image size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub intrinsics: CameraIntrinsics,
    pub pose: CameraPose,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(intrinsics: CameraIntrinsics, pose: CameraPose, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::arg("camera resolution must be positive"));
        }
        Ok(Self {
            intrinsics,
            pose,
            width,
            height,
        })
    }

    /// Optical centre in world coordinates.
    pub fn center(&self) -> Point3<f64> {
        Point3::from(self.pose.inverse().translation)
    }

    /// Relative pose mapping this camera's frame into `other`'s frame.
    pub fn relative_to(&self, other: &Camera) -> CameraPose {
        other.pose.compose(&self.pose.inverse())
    }

    /// The same camera on a grid downsampled by an integer `factor`.
    pub fn downsampled(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.width % factor != 0 || self.height % factor != 0 {
            return Err(Error::arg(format!(
                "resolution {}x{} is not divisible by {factor}",
                self.width, self.height
            )));
        }
        Ok(Self {
            intrinsics: self.intrinsics.scaled(1.0 / factor as f64),
            pose: self.pose,
            width: self.width / factor,
            height: self.height / factor,
        })
    }

    /// World point seen at pixel `p` with camera-frame depth `depth`.
    pub fn unproject(&self, p: PixelCoord, depth: f64) -> Point3<f64> {
        let xc = self.intrinsics.backproject(p, depth);
        Point3::from(self.pose.inverse().transform(&xc))
    }

    /// Projects a world point; returns the pixel and camera-frame depth.
    pub fn project_world(&self, x: &Point3<f64>) -> Option<(PixelCoord, f64)> {
        let xc = self.pose.transform(&x.coords);
        self.intrinsics.project(&xc).map(|p| (p, xc.z))
    }

    pub fn contains(&self, p: PixelCoord) -> bool {
        p.u >= 0.0 && p.v >= 0.0 && p.u <= (self.width - 1) as f64 && p.v <= (self.height - 1) as f64
    }
}

/// Continuous pixel coordinate (column `u`, row `v`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelCoord {
    pub u: f64,
    pub v: f64,
}

impl PixelCoord {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn distance(&self, other: &PixelCoord) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }
}

/// Result of reprojecting a reference pixel into a source view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    /// Lands in front of the source camera at `pixel`, with source-frame depth `depth`.
    Visible { pixel: PixelCoord, depth: f64 },
    /// The 3-D point is at or behind the source camera plane.
    BehindCamera,
}

impl Projection {
    pub fn pixel(&self) -> Option<PixelCoord> {
        match *self {
            Projection::Visible { pixel, .. } => Some(pixel),
            Projection::BehindCamera => None,
        }
    }
}

/// Precomputed reference-to-source mapping `x_src ~ (K_s R K_r⁻¹ p̃) d + K_s t`.
#[derive(Debug, Clone, Copy)]
pub struct RelativeProjector {
    ray_map: Matrix3<f64>,
    offset: Vector3<f64>,
}

impl RelativeProjector {
    pub fn new(ref_cam: &Camera, src_cam: &Camera) -> Self {
        let rel = ref_cam.relative_to(src_cam);
        let ks = src_cam.intrinsics.matrix();
        Self {
            ray_map: ks * rel.rotation() * ref_cam.intrinsics.inverse_matrix(),
            offset: ks * rel.translation(),
        }
    }

    #[inline]
    pub fn project(&self, u: f64, v: f64, depth: f64) -> Projection {
        let h = self.ray_map * Vector3::new(u, v, 1.0) * depth + self.offset;
        if h.z <= 0.0 {
            return Projection::BehindCamera;
        }
        Projection::Visible {
            pixel: PixelCoord::new(h.x / h.z, h.y / h.z),
            depth: h.z,
        }
    }
}

/// Reprojects reference pixel `p` at reference-frame depth `depth` into `src_cam`.
pub fn project_to_source(p: PixelCoord, depth: f64, ref_cam: &Camera, src_cam: &Camera) -> Result<Projection> {
    if !(depth > 0.0) || !depth.is_finite() {
        return Err(Error::arg(format!("depth must be positive and finite, got {depth}")));
    }
    if !(p.u.is_finite() && p.v.is_finite()) {
        return Err(Error::arg("pixel coordinate must be finite"));
    }
    Ok(RelativeProjector::new(ref_cam, src_cam).project(p.u, p.v, depth))
}

/// Bilinear interpolation of a scalar grid. Outside `[0, W-1] x [0, H-1]`
/// returns `(0.0, false)`.
pub fn bilinear_sample(map: ArrayView2<f32>, p: PixelCoord) -> (f32, bool) {
    let (h, w) = map.dim();
    match Footprint::locate(p, w, h) {
        Some(fp) => (fp.apply(|y, x| map[[y, x]]), true),
        None => (0.0, false),
    }
}

/// Bilinear interpolation of every channel of an `H x W x C` grid into `out`.
/// Writes zeros and returns `false` outside the grid.
pub fn bilinear_sample_channels(map: ArrayView3<f32>, p: PixelCoord, out: &mut [f32]) -> bool {
    let (h, w, c) = map.dim();
    debug_assert_eq!(out.len(), c);
    match Footprint::locate(p, w, h) {
        Some(fp) => {
            for (ch, o) in out.iter_mut().enumerate() {
                *o = fp.apply(|y, x| map[[y, x, ch]]);
            }
            true
        }
        None => {
            out.fill(0.0);
            false
        }
    }
}

#[derive(Clone, Copy)]
struct Footprint {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
    fx: f64,
    fy: f64,
}

impl Footprint {
    #[inline]
    fn locate(p: PixelCoord, w: usize, h: usize) -> Option<Self> {
        if w == 0 || h == 0 {
            return None;
        }
        if !(p.u >= 0.0 && p.v >= 0.0 && p.u <= (w - 1) as f64 && p.v <= (h - 1) as f64) {
            return None;
        }
        let x0 = p.u.floor() as usize;
        let y0 = p.v.floor() as usize;
        Some(Self {
            x0,
            y0,
            x1: (x0 + 1).min(w - 1),
            y1: (y0 + 1).min(h - 1),
            fx: p.u - x0 as f64,
            fy: p.v - y0 as f64,
        })
    }

    #[inline]
    fn apply(&self, get: impl Fn(usize, usize) -> f32) -> f32 {
        let top = get(self.y0, self.x0) as f64 * (1.0 - self.fx) + get(self.y0, self.x1) as f64 * self.fx;
        let bottom = get(self.y1, self.x0) as f64 * (1.0 - self.fx) + get(self.y1, self.x1) as f64 * self.fx;
        (top * (1.0 - self.fy) + bottom * self.fy) as f32
    }
}

/// Gathers `src` (an `H x W x C` grid seen by `src_cam`) onto the reference
/// grid at a single depth plane.
pub fn homography_warp(
    src: ArrayView3<f32>,
    ref_cam: &Camera,
    src_cam: &Camera,
    depth: f64,
) -> Result<(Array3<f32>, Array2<bool>)> {
    if !(depth > 0.0) || !depth.is_finite() {
        return Err(Error::arg(format!("depth must be positive and finite, got {depth}")));
    }
    let depths = Array2::from_elem((ref_cam.height, ref_cam.width), depth);
    warp_at_depths(src, ref_cam, src_cam, depths.view())
}

/// Per-pixel variant of [`homography_warp`]: reference pixel `(y, x)` is
/// reprojected at `depths[[y, x]]`.
pub fn warp_at_depths(
    src: ArrayView3<f32>,
    ref_cam: &Camera,
    src_cam: &Camera,
    depths: ArrayView2<f64>,
) -> Result<(Array3<f32>, Array2<bool>)> {
    let (h, w) = (ref_cam.height, ref_cam.width);
    if depths.dim() != (h, w) {
        return Err(Error::arg("depth field does not match the reference grid"));
    }
    if src.dim().0 != src_cam.height || src.dim().1 != src_cam.width {
        return Err(Error::arg("source map does not match the source camera resolution"));
    }
    if depths.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::arg("depth field must be strictly positive"));
    }
    let c = src.dim().2;
    let proj = RelativeProjector::new(ref_cam, src_cam);
    let mut out = Array3::<f32>::zeros((h, w, c));
    let mut mask = Array2::from_elem((h, w), false);
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(mask.axis_iter_mut(Axis(0)).into_par_iter())
        .enumerate()
        .for_each(|(y, (mut row, mut mrow))| {
            let mut buf = vec![0f32; c];
            for x in 0..w {
                let ok = match proj.project(x as f64, y as f64, depths[[y, x]]) {
                    Projection::Visible { pixel, .. } => bilinear_sample_channels(src, pixel, &mut buf),
                    Projection::BehindCamera => false,
                };
                if ok {
                    row.row_mut(x).iter_mut().zip(&buf).for_each(|(o, v)| *o = *v);
                }
                mrow[x] = ok;
            }
        });
    Ok((out, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn simple_cam(t: Vector3<f64>) -> Camera {
        let k = CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0).unwrap();
        Camera::new(k, CameraPose::new(Matrix3::identity(), t).unwrap(), 101, 101).unwrap()
    }

    #[test]
    fn identical_cameras_map_pixels_to_themselves() {
        let cam = simple_cam(Vector3::zeros());
        for d in [0.1, 2.0, 1e6] {
            let pr = project_to_source(PixelCoord::new(13.25, 77.5), d, &cam, &cam).unwrap();
            let px = pr.pixel().unwrap();
            assert_abs_diff_eq!(px.u, 13.25, epsilon = 1e-9);
            assert_abs_diff_eq!(px.v, 77.5, epsilon = 1e-9);
        }
    }

    #[test]
    fn lateral_translation_shifts_by_disparity() {
        let r = simple_cam(Vector3::zeros());
        let s = simple_cam(Vector3::new(0.5, 0.0, 0.0));
        let px = project_to_source(PixelCoord::new(50.0, 50.0), 2.0, &r, &s).unwrap().pixel().unwrap();
        assert_abs_diff_eq!(px.u, 75.0, epsilon = 1e-12);
        assert_abs_diff_eq!(px.v, 50.0, epsilon = 1e-12);

        let far = project_to_source(PixelCoord::new(50.0, 50.0), 1e9, &r, &s).unwrap().pixel().unwrap();
        assert_abs_diff_eq!(far.u, 50.0, epsilon = 1e-6);
    }

    #[test]
    fn non_positive_depth_is_rejected() {
        let cam = simple_cam(Vector3::zeros());
        assert!(project_to_source(PixelCoord::new(1.0, 1.0), 0.0, &cam, &cam).is_err());
        assert!(project_to_source(PixelCoord::new(1.0, 1.0), -3.0, &cam, &cam).is_err());
    }

    #[test]
    fn behind_camera_is_flagged() {
        let r = simple_cam(Vector3::zeros());
        let s = simple_cam(Vector3::new(0.0, 0.0, -5.0));
        let pr = project_to_source(PixelCoord::new(50.0, 50.0), 2.0, &r, &s).unwrap();
        assert_eq!(pr, Projection::BehindCamera);
    }

    #[test]
    fn bilinear_contract() {
        let m = array![[2.0f32, 4.0, 6.0], [8.0, 10.0, 12.0]];
        assert_eq!(bilinear_sample(m.view(), PixelCoord::new(1.0, 1.0)), (10.0, true));
        assert_eq!(bilinear_sample(m.view(), PixelCoord::new(0.5, 0.0)), (3.0, true));
        assert_eq!(bilinear_sample(m.view(), PixelCoord::new(-1.0, 0.0)), (0.0, false));
        assert_eq!(bilinear_sample(m.view(), PixelCoord::new(2.0, 1.0)), (12.0, true));
        assert_eq!(bilinear_sample(m.view(), PixelCoord::new(2.0001, 1.0)), (0.0, false));
    }

    #[test]
    fn rotations_are_validated() {
        let bad = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(CameraPose::new(bad, Vector3::zeros()).is_err());
        let reflect = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(CameraPose::new(reflect, Vector3::zeros()).is_err());
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn look_at_faces_target() {
        let target = Point3::new(10.0, -3.0, 500.0);
        let pose = CameraPose::look_at(Point3::new(100.0, 20.0, 0.0), target).unwrap();
        let xc = pose.transform(&target.coords);
        assert_abs_diff_eq!(xc.x, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(xc.y, 0.0, epsilon = 1e-9);
        assert!(xc.z > 0.0);
    }

    #[test]
    fn relative_pose_composes() {
        let a = CameraPose::look_at(Point3::new(1.0, 2.0, -3.0), Point3::new(0.0, 0.0, 10.0)).unwrap();
        let b = CameraPose::look_at(Point3::new(-4.0, 1.0, 0.5), Point3::new(0.0, 1.0, 9.0)).unwrap();
        let k = CameraIntrinsics::new(50.0, 50.0, 20.0, 20.0).unwrap();
        let ca = Camera::new(k, a, 40, 40).unwrap();
        let cb = Camera::new(k, b, 40, 40).unwrap();
        let rel = ca.relative_to(&cb);
        let x = Vector3::new(0.3, -0.7, 4.0);
        let direct = b.transform(&a.inverse().transform(&x));
        assert_abs_diff_eq!((rel.transform(&x) - direct).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn warp_with_identical_cameras_is_exact() {
        let cam = simple_cam(Vector3::zeros());
        let src = Array3::from_shape_fn((101, 101, 2), |(y, x, c)| (y * 7 + x * 3 + c) as f32 * 0.01);
        let (out, mask) = homography_warp(src.view(), &cam, &cam, 3.0).unwrap();
        assert_eq!(out, src);
        assert!(mask.iter().all(|&m| m));
    }

    #[test]
    fn warp_out_of_bounds_is_zero() {
        let r = simple_cam(Vector3::zeros());
        let s = simple_cam(Vector3::new(500.0, 0.0, 0.0));
        let src = Array3::from_elem((101, 101, 1), 1.0f32);
        let (out, mask) = homography_warp(src.view(), &r, &s, 1.0).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
        assert!(mask.iter().all(|&m| !m));
    }
}
