//! Procedural scenes with analytic ground truth.
//!
//! Scenes are a handful of textured primitives (fronto-parallel planes,
//! planes slanted about the vertical axis, axis-aligned boxes) rendered by
//! casting one ray through every pixel centre. Depth is the camera-frame `z`
//! of the nearest hit, so it is exact up to floating-point rounding.

use nalgebra::{Point3, Vector3};
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Camera, CameraIntrinsics, CameraPose, PixelCoord};

/// Image value of pixels whose ray misses every primitive.
pub const BACKGROUND_VALUE: f32 = 0.0;

const HIT_EPS: f64 = 1e-9;

/// Albedo pattern, evaluated in the surface's own 2-D coordinates (scene units).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Texture {
    Constant {
        value: f64,
    },
    Checker {
        period: f64,
        low: f64,
        high: f64,
    },
    /// Multi-octave value noise. `wavelength` is the finest lattice spacing;
    /// each further octave doubles it. Primitives with the same `material`
    /// share one noise field.
    ValueNoise {
        material: u32,
        wavelength: f64,
        octaves: u32,
        contrast: f64,
    },
}

impl Texture {
    pub fn noise(material: u32, wavelength: f64) -> Self {
        Texture::ValueNoise {
            material,
            wavelength,
            octaves: 4,
            contrast: 0.8,
        }
    }

    fn albedo(&self, scene_seed: u64, s: f64, t: f64) -> f64 {
        match *self {
            Texture::Constant { value } => value,
            Texture::Checker { period, low, high } => {
                let i = (s / period).floor() as i64 + (t / period).floor() as i64;
                if i.rem_euclid(2) == 0 {
                    low
                } else {
                    high
                }
            }
            Texture::ValueNoise {
                material,
                wavelength,
                octaves,
                contrast,
            } => {
                let seed = mix64(scene_seed ^ (material as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                let mut acc = 0.0;
                let mut norm = 0.0;
                let mut lambda = wavelength;
                for octave in 0..octaves.max(1) {
                    let amp = 0.8f64.powi(octave as i32);
                    acc += amp * value_noise(seed.wrapping_add(octave as u64), s / lambda, t / lambda);
                    norm += amp;
                    lambda *= 2.0;
                }
                (0.5 + contrast * (acc / norm - 0.5)).clamp(0.0, 1.0)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Texture::Constant { value } => (0.0..=1.0).contains(&value),
            Texture::Checker { period, low, high } => {
                period > 0.0 && (0.0..=1.0).contains(&low) && (0.0..=1.0).contains(&high)
            }
            Texture::ValueNoise {
                wavelength, contrast, ..
            } => wavelength > 0.0 && contrast >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::arg(format!("invalid texture {self:?}")))
        }
    }
}

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    let h = mix64(seed ^ mix64((ix as u64).wrapping_mul(0x27D4_EB2F_1656_67C5) ^ (iy as u64)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (ix, iy) = (fx as i64, fy as i64);
    let fade = |t: f64| t * t * t * (t * (t * 6.0 - 15.0) + 10.0);
    let (sx, sy) = (fade(x - fx), fade(y - fy));
    let v00 = lattice(seed, ix, iy);
    let v10 = lattice(seed, ix + 1, iy);
    let v01 = lattice(seed, ix, iy + 1);
    let v11 = lattice(seed, ix + 1, iy + 1);
    let top = v00 + (v10 - v00) * sx;
    let bottom = v01 + (v11 - v01) * sx;
    top + (bottom - top) * sy
}

/// Geometric part of a primitive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// Rectangle in the plane `z = depth`, centred at `center` (x, y).
    FrontoPlane {
        depth: f64,
        center: [f64; 2],
        half_extent: [f64; 2],
    },
    /// Plane `z = offset + slope * x` over `x_range x y_range`.
    SlantedPlane {
        offset: f64,
        slope: f64,
        x_range: [f64; 2],
        y_range: [f64; 2],
    },
    AxisBox {
        min: [f64; 3],
        max: [f64; 3],
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub texture: Texture,
}

/// A set of textured primitives plus the seed driving every texture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDefinition {
    pub seed: u64,
    pub primitives: Vec<Primitive>,
}

/// Nearest ray intersection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    /// Ray parameter; equals camera-frame depth for rays built by [`SceneDefinition::cast_ray`].
    pub t: f64,
    pub normal: Vector3<f64>,
    pub albedo: f64,
    pub primitive: usize,
}

// Fixed directional light (towards the light) for Lambertian shading.
fn light_dir() -> Vector3<f64> {
    Vector3::new(0.3, -0.5, -1.0).normalize()
}

const AMBIENT: f64 = 0.35;

impl Shape {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Shape::FrontoPlane {
                depth, half_extent, ..
            } => depth.is_finite() && half_extent[0] > 0.0 && half_extent[1] > 0.0,
            Shape::SlantedPlane {
                offset,
                slope,
                x_range,
                y_range,
            } => offset.is_finite() && slope.is_finite() && x_range[1] > x_range[0] && y_range[1] > y_range[0],
            Shape::AxisBox { min, max } => (0..3).all(|i| max[i] > min[i]),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::arg(format!("invalid primitive extent {self:?}")))
        }
    }

    /// Returns `(t, normal, surface s, surface t)`.
    fn intersect(&self, o: &Point3<f64>, w: &Vector3<f64>) -> Option<(f64, Vector3<f64>, f64, f64)> {
        match *self {
            Shape::FrontoPlane {
                depth,
                center,
                half_extent,
            } => {
                if w.z.abs() < 1e-15 {
                    return None;
                }
                let t = (depth - o.z) / w.z;
                if t <= HIT_EPS {
                    return None;
                }
                let p = o + w * t;
                if (p.x - center[0]).abs() > half_extent[0] || (p.y - center[1]).abs() > half_extent[1] {
                    return None;
                }
                Some((t, Vector3::z(), p.x, p.y))
            }
            Shape::SlantedPlane {
                offset,
                slope,
                x_range,
                y_range,
            } => {
                let n = Vector3::new(-slope, 0.0, 1.0);
                let denom = n.dot(w);
                if denom.abs() < 1e-15 {
                    return None;
                }
                let t = (offset - n.dot(&o.coords)) / denom;
                if t <= HIT_EPS {
                    return None;
                }
                let p = o + w * t;
                if p.x < x_range[0] || p.x > x_range[1] || p.y < y_range[0] || p.y > y_range[1] {
                    return None;
                }
                let arc = p.x * (1.0 + slope * slope).sqrt();
                Some((t, n.normalize(), arc, p.y))
            }
            Shape::AxisBox { min, max } => {
                let mut t_near = f64::NEG_INFINITY;
                let mut t_far = f64::INFINITY;
                let mut axis = 0;
                for i in 0..3 {
                    if w[i].abs() < 1e-15 {
                        if o[i] < min[i] || o[i] > max[i] {
                            return None;
                        }
                        continue;
                    }
                    let (mut a, mut b) = ((min[i] - o[i]) / w[i], (max[i] - o[i]) / w[i]);
                    if a > b {
                        std::mem::swap(&mut a, &mut b);
                    }
                    if a > t_near {
                        t_near = a;
                        axis = i;
                    }
                    t_far = t_far.min(b);
                }
                if t_near > t_far || t_near <= HIT_EPS {
                    return None;
                }
                let p = o + w * t_near;
                let mut n = Vector3::zeros();
                n[axis] = if w[axis] > 0.0 { -1.0 } else { 1.0 };
                let (s, t) = match axis {
                    0 => (p.y, p.z),
                    1 => (p.x, p.z),
                    _ => (p.x, p.y),
                };
                Some((t_near, n, s, t))
            }
        }
    }

    /// Surface patches as (origin, axis_u, axis_v, len_u, len_v) rectangles.
    fn patches(&self) -> Vec<(Point3<f64>, Vector3<f64>, Vector3<f64>, f64, f64)> {
        match *self {
            Shape::FrontoPlane {
                depth,
                center,
                half_extent,
            } => vec![(
                Point3::new(center[0] - half_extent[0], center[1] - half_extent[1], depth),
                Vector3::x(),
                Vector3::y(),
                2.0 * half_extent[0],
                2.0 * half_extent[1],
            )],
            Shape::SlantedPlane {
                offset,
                slope,
                x_range,
                y_range,
            } => {
                let dir = Vector3::new(1.0, 0.0, slope);
                let len = dir.norm() * (x_range[1] - x_range[0]);
                vec![(
                    Point3::new(x_range[0], y_range[0], offset + slope * x_range[0]),
                    dir.normalize(),
                    Vector3::y(),
                    len,
                    y_range[1] - y_range[0],
                )]
            }
            Shape::AxisBox { min, max } => {
                let d = [max[0] - min[0], max[1] - min[1], max[2] - min[2]];
                let lo = Point3::new(min[0], min[1], min[2]);
                let mut out = Vec::with_capacity(6);
                for (axis, (ua, va)) in [(0usize, (1usize, 2usize)), (1, (0, 2)), (2, (0, 1))] {
                    for side in [0.0, 1.0] {
                        let mut origin = lo;
                        origin[axis] += side * d[axis];
                        let mut u = Vector3::zeros();
                        u[ua] = 1.0;
                        let mut v = Vector3::zeros();
                        v[va] = 1.0;
                        out.push((origin, u, v, d[ua], d[va]));
                    }
                }
                out
            }
        }
    }
}

impl SceneDefinition {
    pub fn new(seed: u64, primitives: Vec<Primitive>) -> Result<Self> {
        let scene = Self { seed, primitives };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        if self.primitives.is_empty() {
            return Err(Error::arg("scene needs at least one primitive"));
        }
        for p in &self.primitives {
            p.shape.validate()?;
            p.texture.validate()?;
        }
        Ok(())
    }

    /// Nearest hit along `o + t w`, `t > 0`.
    pub fn intersect(&self, o: &Point3<f64>, w: &Vector3<f64>) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (i, prim) in self.primitives.iter().enumerate() {
            if let Some((t, normal, s, u)) = prim.shape.intersect(o, w) {
                if best.is_none_or(|b| t < b.t) {
                    best = Some(Hit {
                        t,
                        normal,
                        albedo: prim.texture.albedo(self.seed, s, u),
                        primitive: i,
                    });
                }
            }
        }
        best
    }

    /// Casts the ray of pixel `p`; `t` of the hit is the camera-frame depth.
    pub fn cast_ray(&self, cam: &Camera, p: PixelCoord) -> Option<Hit> {
        let dir_cam = cam.intrinsics.backproject(p, 1.0);
        let dir = cam.pose.rotation().transpose() * dir_cam;
        self.intersect(&cam.center(), &dir)
    }

    /// True if the segment from `from` to `to` is blocked before reaching `to`.
    pub fn occluded(&self, from: &Point3<f64>, to: &Point3<f64>) -> bool {
        let w = to - from;
        self.intersect(from, &w).is_some_and(|h| h.t < 1.0 - 1e-7)
    }
}

fn shade(hit: &Hit) -> f32 {
    let lambert = hit.normal.dot(&light_dir()).abs();
    ((AMBIENT + (1.0 - AMBIENT) * lambert) * hit.albedo).clamp(0.0, 1.0) as f32
}

/// Camera placement for synthetic captures. Camera 0 is the reference at
/// `target - distance * z`, looking along `+z`; every camera faces `target`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub layout: RigLayout,
    pub target: [f64; 3],
    pub distance: f64,
    pub focal: f64,
    pub width: usize,
    pub height: usize,
    /// Extra pixels on every side of the source images, so that sources see
    /// past the reference frustum's edges.
    #[serde(default)]
    pub source_margin: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RigLayout {
    /// Sources on a circle of `radius` around the reference, in the plane
    /// orthogonal to the viewing axis. `count` includes the reference.
    Ring { radius: f64, count: usize, phase_deg: f64 },
    /// Sources on an arc around the target in the x-z plane, alternating
    /// sides, the outermost at `±span_deg / 2`.
    Arc { span_deg: f64, count: usize },
}

impl CameraRig {
    pub fn count(&self) -> usize {
        match self.layout {
            RigLayout::Ring { count, .. } | RigLayout::Arc { count, .. } => count,
        }
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::new(
            self.focal,
            self.focal,
            (self.width as f64 - 1.0) / 2.0,
            (self.height as f64 - 1.0) / 2.0,
        )
    }

    pub fn cameras(&self) -> Result<Vec<Camera>> {
        let n = self.count();
        if n < 2 {
            return Err(Error::arg("a rig needs at least two cameras"));
        }
        if !(self.distance > 0.0) {
            return Err(Error::arg("rig distance must be positive"));
        }
        let k = self.intrinsics()?;
        let target = Point3::from(self.target);
        let reference = target - Vector3::z() * self.distance;
        let mut eyes = vec![reference];
        match self.layout {
            RigLayout::Ring {
                radius, phase_deg, ..
            } => {
                if !(radius > 0.0) {
                    return Err(Error::arg("ring radius must be positive"));
                }
                for i in 0..n - 1 {
                    let phi = (phase_deg + 360.0 * i as f64 / (n - 1) as f64).to_radians();
                    eyes.push(reference + Vector3::new(radius * phi.cos(), radius * phi.sin(), 0.0));
                }
            }
            RigLayout::Arc { span_deg, .. } => {
                if !(span_deg > 0.0 && span_deg < 180.0) {
                    return Err(Error::arg("arc span must be in (0, 180) degrees"));
                }
                let pairs = n / 2;
                let step = span_deg / 2.0 / pairs.max(1) as f64;
                for i in 0..n - 1 {
                    let k = (i / 2 + 1) as f64;
                    let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                    let a = (sign * k * step).to_radians();
                    eyes.push(target + Vector3::new(a.sin(), 0.0, -a.cos()) * self.distance);
                }
            }
        }
        let m = self.source_margin;
        let wide = CameraIntrinsics::new(k.fx, k.fy, k.cx + m as f64, k.cy + m as f64)?;
        eyes.into_iter()
            .enumerate()
            .map(|(i, eye)| {
                let pose = CameraPose::look_at(eye, target)?;
                if i == 0 {
                    Camera::new(k, pose, self.width, self.height)
                } else {
                    Camera::new(wide, pose, self.width + 2 * m, self.height + 2 * m)
                }
            })
            .collect()
    }
}

/// Ray-cast image and exact depth of one view.
#[derive(Debug, Clone)]
pub struct RenderedView {
    pub image: Array2<f32>,
    /// Camera-frame depth of the nearest hit; 0 where nothing was hit.
    pub gt_depth: Array2<f64>,
    pub camera: Camera,
}

pub fn render_view(scene: &SceneDefinition, cam: &Camera) -> RenderedView {
    let mut image = Array2::from_elem((cam.height, cam.width), BACKGROUND_VALUE);
    let mut gt_depth = Array2::zeros((cam.height, cam.width));
    image
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(gt_depth.axis_iter_mut(Axis(0)).into_par_iter())
        .enumerate()
        .for_each(|(y, (mut irow, mut drow))| {
            for x in 0..cam.width {
                if let Some(hit) = scene.cast_ray(cam, PixelCoord::new(x as f64, y as f64)) {
                    irow[x] = shade(&hit);
                    drow[x] = hit.t;
                }
            }
        });
    RenderedView {
        image,
        gt_depth,
        camera: *cam,
    }
}

/// Stratified samples over every primitive surface: each rectangle is cut into
/// `round(len * sqrt(density))` cells per side and the cell centres are kept.
pub fn sample_gt_cloud(scene: &SceneDefinition, density: f64) -> Result<Vec<Point3<f64>>> {
    if !(density > 0.0) || !density.is_finite() {
        return Err(Error::arg("point density must be positive"));
    }
    let step = density.sqrt();
    let mut pts = Vec::new();
    for prim in &scene.primitives {
        for (origin, u, v, lu, lv) in prim.shape.patches() {
            let nu = ((lu * step).round() as usize).max(1);
            let nv = ((lv * step).round() as usize).max(1);
            for j in 0..nv {
                for i in 0..nu {
                    let a = (i as f64 + 0.5) / nu as f64 * lu;
                    let b = (j as f64 + 0.5) / nv as f64 * lv;
                    pts.push(origin + u * a + v * b);
                }
            }
        }
    }
    Ok(pts)
}

/// Keeps the points that at least one camera sees unobstructed and inside its image.
pub fn visible_points(scene: &SceneDefinition, cams: &[Camera], points: &[Point3<f64>]) -> Vec<Point3<f64>> {
    points
        .par_iter()
        .filter(|x| {
            cams.iter().any(|cam| {
                cam.project_world(x)
                    .is_some_and(|(p, _)| cam.contains(p) && !scene.occluded(&cam.center(), x))
            })
        })
        .copied()
        .collect()
}

/// Knobs for [`make_occlusion_case_with`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionParams {
    pub cameras: usize,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    /// Angle between the reference and source viewing directions at the target.
    pub baseline_deg: f64,
    /// Side of the occluded target square as a fraction of the reference frustum width.
    pub region_fraction: f64,
    pub box_thickness: f64,
    /// Range of distances between an occluder's back face and the background.
    pub occluder_gap: [f64; 2],
    pub texture_wavelength: f64,
    pub texture_octaves: u32,
    /// Give occluders the background's material.
    pub occluders_share_material: bool,
    pub source_margin: usize,
}

impl Default for OcclusionParams {
    fn default() -> Self {
        Self {
            cameras: 5,
            width: 160,
            height: 128,
            focal: 2000.0,
            baseline_deg: 10.0,
            region_fraction: 0.2,
            box_thickness: 4.0,
            occluder_gap: [40.0, 140.0],
            texture_wavelength: 0.5,
            texture_octaves: 5,
            occluders_share_material: false,
            source_margin: 16,
        }
    }
}

impl OcclusionParams {
    fn texture(&self, material: u32) -> Texture {
        Texture::ValueNoise {
            material,
            wavelength: self.texture_wavelength,
            octaves: self.texture_octaves,
            contrast: 0.8,
        }
    }
}

/// An occlusion scene together with its bookkeeping.
#[derive(Debug, Clone)]
pub struct OcclusionCase {
    pub scene: SceneDefinition,
    pub rig: CameraRig,
    /// Target square on the background plane: centre (x, y) and half side.
    pub region_center: [f64; 2],
    pub region_half: f64,
    pub background_depth: f64,
    /// Rig camera indices (1-based, 0 is the reference) hidden from the region.
    pub occluded_views: Vec<usize>,
}

impl OcclusionCase {
    /// Grid of points covering the target region.
    pub fn region_points(&self, per_side: usize) -> Vec<Point3<f64>> {
        let mut out = Vec::with_capacity(per_side * per_side);
        for j in 0..per_side {
            for i in 0..per_side {
                let a = (i as f64 + 0.5) / per_side as f64 * 2.0 - 1.0;
                let b = (j as f64 + 0.5) / per_side as f64 * 2.0 - 1.0;
                out.push(Point3::new(
                    self.region_center[0] + a * self.region_half,
                    self.region_center[1] + b * self.region_half,
                    self.background_depth,
                ));
            }
        }
        out
    }
}

/// Background plane with a target square hidden from exactly `occluder_count`
/// source views by boxes placed between those cameras and the square.
pub fn make_occlusion_case(seed: u64, base_depth: f64, occluder_count: usize) -> Result<OcclusionCase> {
    make_occlusion_case_with(seed, base_depth, occluder_count, &OcclusionParams::default())
}

pub fn make_occlusion_case_with(
    seed: u64,
    base_depth: f64,
    occluder_count: usize,
    params: &OcclusionParams,
) -> Result<OcclusionCase> {
    let sources = params.cameras.saturating_sub(1);
    if sources == 0 {
        return Err(Error::arg("occlusion case needs at least one source view"));
    }
    if occluder_count >= sources {
        return Err(Error::Infeasible(format!(
            "{occluder_count} occluders would hide the region from all {sources} source views"
        )));
    }
    if !(base_depth > 0.0) {
        return Err(Error::arg("base depth must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let radius = base_depth * params.baseline_deg.to_radians().tan();
    let rig = CameraRig {
        layout: RigLayout::Ring {
            radius,
            count: params.cameras,
            phase_deg: rng.random_range(0.0..360.0),
        },
        target: [0.0, 0.0, base_depth],
        distance: base_depth,
        focal: params.focal,
        width: params.width,
        height: params.height,
        source_margin: params.source_margin,
    };
    let cams = rig.cameras()?;

    let frustum_w = base_depth * params.width as f64 / params.focal;
    let frustum_h = base_depth * params.height as f64 / params.focal;
    let region_half = 0.5 * params.region_fraction * frustum_w;
    let jitter = 0.1 * frustum_h;
    let region_center = [rng.random_range(-jitter..jitter), rng.random_range(-jitter..jitter)];

    let reach = 2.0 * (frustum_w + frustum_h) + 2.0 * radius;
    let mut primitives = vec![Primitive {
        shape: Shape::FrontoPlane {
            depth: base_depth,
            center: [0.0, 0.0],
            half_extent: [reach, reach],
        },
        texture: params.texture(0),
    }];

    let mut candidates: Vec<usize> = (1..params.cameras).collect();
    candidates.shuffle(&mut rng);
    let mut occluded_views: Vec<usize> = candidates[..occluder_count].to_vec();
    occluded_views.sort_unstable();

    let mut case = OcclusionCase {
        scene: SceneDefinition::new(seed, primitives.clone())?,
        rig,
        region_center,
        region_half,
        background_depth: base_depth,
        occluded_views: occluded_views.clone(),
    };
    let region = case.region_points(5);
    let corners: Vec<Point3<f64>> = [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)]
        .iter()
        .map(|(a, b)| {
            Point3::new(
                region_center[0] + a * region_half,
                region_center[1] + b * region_half,
                base_depth,
            )
        })
        .collect();

    for (slot, &view) in occluded_views.iter().enumerate() {
        let eye = cams[view].center();
        let material = if params.occluders_share_material { 0 } else { 1 + slot as u32 };
        let mut placed = None;
        for step in 0..12 {
            let [near, far] = params.occluder_gap;
            let z_back = base_depth - (near + (far - near) * step as f64 / 11.0);
            let z_front = z_back - params.box_thickness;
            if z_back >= base_depth || z_front <= eye.z {
                continue;
            }
            // Footprint of the source's view cone towards the region at both box faces.
            let mut lo = [f64::INFINITY; 2];
            let mut hi = [f64::NEG_INFINITY; 2];
            for c in &corners {
                for z in [z_front, z_back] {
                    let s = (z - eye.z) / (c.z - eye.z);
                    let p = eye + (c - eye) * s;
                    for i in 0..2 {
                        lo[i] = lo[i].min(p[i]);
                        hi[i] = hi[i].max(p[i]);
                    }
                }
            }
            let margin = 0.1 * region_half;
            let shape = Shape::AxisBox {
                min: [lo[0] - margin, lo[1] - margin, z_front],
                max: [hi[0] + margin, hi[1] + margin, z_back],
            };
            let trial = SceneDefinition::new(
                seed,
                vec![Primitive {
                    shape: shape.clone(),
                    texture: params.texture(material),
                }],
            )?;
            let blocks_other = cams
                .iter()
                .enumerate()
                .filter(|(i, _)| !occluded_views.contains(i))
                .any(|(_, cam)| region.iter().any(|x| trial.occluded(&cam.center(), x)));
            let blocks_self = region.iter().all(|x| trial.occluded(&eye, x));
            if blocks_self && !blocks_other {
                placed = Some(trial.primitives.into_iter().next().unwrap());
                break;
            }
        }
        match placed {
            Some(p) => primitives.push(p),
            None => {
                return Err(Error::Infeasible(format!(
                    "no occluder position hides the region from view {view} only"
                )))
            }
        }
    }
    case.scene = SceneDefinition::new(seed, primitives)?;
    Ok(case)
}

/// A named scene with the rig that views it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteScene {
    pub name: String,
    pub scene: SceneDefinition,
    pub rig: CameraRig,
}

impl SuiteScene {
    /// Renders every rig camera, reference first.
    pub fn render(&self) -> Result<Vec<RenderedView>> {
        Ok(self.rig.cameras()?.iter().map(|c| render_view(&self.scene, c)).collect())
    }
}

/// Depth of the background plane in the shipped suites.
pub const SUITE_DEPTH: f64 = 560.0;

fn suite_rig(width: usize, height: usize, margin: usize) -> CameraRig {
    CameraRig {
        layout: RigLayout::Ring {
            radius: SUITE_DEPTH * 10f64.to_radians().tan(),
            count: 5,
            phase_deg: 17.0,
        },
        target: [0.0, 0.0, SUITE_DEPTH],
        distance: SUITE_DEPTH,
        focal: 2000.0,
        width,
        height,
        source_margin: margin,
    }
}

/// Fronto-parallel and slanted textured planes filling the view.
pub fn clean_suite() -> Result<Vec<SuiteScene>> {
    let reach = 1e4;
    let plane = |name: &str, shape| -> Result<SuiteScene> {
        Ok(SuiteScene {
            name: name.into(),
            scene: SceneDefinition::new(
                11,
                vec![Primitive {
                    shape,
                    texture: Texture::noise(0, 1.25),
                }],
            )?,
            rig: suite_rig(320, 256, 24),
        })
    };
    Ok(vec![
        plane(
            "fronto",
            Shape::FrontoPlane {
                depth: SUITE_DEPTH,
                center: [0.0, 0.0],
                half_extent: [reach, reach],
            },
        )?,
        plane(
            "slanted",
            Shape::SlantedPlane {
                offset: SUITE_DEPTH,
                slope: 0.3,
                x_range: [-reach, reach],
                y_range: [-reach, reach],
            },
        )?,
    ])
}

/// Five occlusion cases, each hiding its target region from two of the four
/// source views.
pub fn occlusion_suite() -> Result<Vec<SuiteScene>> {
    (0..5u64)
        .map(|seed| {
            let case = make_occlusion_case(seed, SUITE_DEPTH, 2)?;
            Ok(SuiteScene {
                name: format!("occlusion-{seed}"),
                scene: case.scene,
                rig: case.rig,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn plane_scene(depth: f64) -> SceneDefinition {
        SceneDefinition::new(
            7,
            vec![Primitive {
                shape: Shape::FrontoPlane {
                    depth,
                    center: [0.0, 0.0],
                    half_extent: [1e4, 1e4],
                },
                texture: Texture::noise(0, 2.0),
            }],
        )
        .unwrap()
    }

    fn axis_cam() -> Camera {
        let k = CameraIntrinsics::new(100.0, 100.0, 31.5, 23.5).unwrap();
        Camera::new(k, CameraPose::identity(), 64, 48).unwrap()
    }

    #[test]
    fn fronto_plane_depth_is_constant() {
        let v = render_view(&plane_scene(500.0), &axis_cam());
        for &d in v.gt_depth.iter() {
            assert_abs_diff_eq!(d, 500.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn slanted_plane_matches_closed_form() {
        let (a, b) = (400.0, 0.3);
        let scene = SceneDefinition::new(
            1,
            vec![Primitive {
                shape: Shape::SlantedPlane {
                    offset: a,
                    slope: b,
                    x_range: [-1e4, 1e4],
                    y_range: [-1e4, 1e4],
                },
                texture: Texture::noise(0, 2.0),
            }],
        )
        .unwrap();
        let cam = axis_cam();
        let v = render_view(&scene, &cam);
        let k = cam.intrinsics;
        for ((y, x), &d) in v.gt_depth.indexed_iter() {
            // ray (rx d, ry d, d) with rx = (x - cx)/fx: d = a + b rx d
            let rx = (x as f64 - k.cx) / k.fx;
            let expected = a / (1.0 - b * rx);
            assert_abs_diff_eq!(d, expected, epsilon = 1e-9);
            let _ = y;
        }
    }

    #[test]
    fn empty_frustum_is_background() {
        let scene = SceneDefinition::new(
            0,
            vec![Primitive {
                shape: Shape::FrontoPlane {
                    depth: 100.0,
                    center: [1e5, 0.0],
                    half_extent: [1.0, 1.0],
                },
                texture: Texture::Constant { value: 0.5 },
            }],
        )
        .unwrap();
        let v = render_view(&scene, &axis_cam());
        assert!(v.gt_depth.iter().all(|&d| d == 0.0));
        assert!(v.image.iter().all(|&p| p == BACKGROUND_VALUE));
    }

    #[test]
    fn rendering_is_deterministic() {
        let a = render_view(&plane_scene(300.0), &axis_cam());
        let b = render_view(&plane_scene(300.0), &axis_cam());
        assert_eq!(a.image, b.image);
        assert_eq!(a.gt_depth, b.gt_depth);
    }

    #[test]
    fn texture_depends_on_seed() {
        let mut s2 = plane_scene(300.0);
        s2.seed = 8;
        let a = render_view(&plane_scene(300.0), &axis_cam());
        let b = render_view(&s2, &axis_cam());
        assert_ne!(a.image, b.image);
    }

    #[test]
    fn unit_plane_sampling() {
        let scene = SceneDefinition::new(
            0,
            vec![Primitive {
                shape: Shape::FrontoPlane {
                    depth: 3.0,
                    center: [0.0, 0.0],
                    half_extent: [0.5, 0.5],
                },
                texture: Texture::Constant { value: 0.5 },
            }],
        )
        .unwrap();
        let pts = sample_gt_cloud(&scene, 100.0).unwrap();
        assert_eq!(pts.len(), 100);
        assert!(pts.iter().all(|p| (p.z - 3.0).abs() < 1e-9));
        let doubled = sample_gt_cloud(&scene, 200.0).unwrap();
        // 14 x 14 after rounding sqrt(200)
        assert_eq!(doubled.len(), 196);
        assert!(sample_gt_cloud(&scene, 0.0).is_err());
    }

    #[test]
    fn box_sampling_follows_face_area() {
        let scene = SceneDefinition::new(
            0,
            vec![Primitive {
                shape: Shape::AxisBox {
                    min: [0.0, 0.0, 0.0],
                    max: [4.0, 2.0, 1.0],
                },
                texture: Texture::Constant { value: 0.5 },
            }],
        )
        .unwrap();
        let pts = sample_gt_cloud(&scene, 25.0).unwrap();
        let on = |axis: usize, v: f64| pts.iter().filter(|p| (p[axis] - v).abs() < 1e-12).count();
        // face areas: x-faces 2, y-faces 4, z-faces 8
        assert_eq!(on(0, 0.0), 50);
        assert_eq!(on(1, 0.0), 100);
        assert_eq!(on(2, 0.0), 200);
        assert_eq!(pts.len(), 2 * (50 + 100 + 200));
    }

    #[test]
    fn occlusion_case_rejects_blocking_every_view() {
        assert!(matches!(make_occlusion_case(1, 500.0, 4), Err(Error::Infeasible(_))));
    }

    #[test]
    fn occlusion_case_is_deterministic() {
        let a = make_occlusion_case(3, 500.0, 2).unwrap();
        let b = make_occlusion_case(3, 500.0, 2).unwrap();
        assert_eq!(a.scene, b.scene);
        assert_eq!(a.rig, b.rig);
        assert_eq!(a.occluded_views, b.occluded_views);
    }

    #[test]
    fn rig_cameras_face_target() {
        for layout in [
            RigLayout::Ring {
                radius: 80.0,
                count: 5,
                phase_deg: 10.0,
            },
            RigLayout::Arc {
                span_deg: 40.0,
                count: 4,
            },
        ] {
            for margin in [0, 3] {
                let rig = CameraRig {
                    layout: layout.clone(),
                    target: [1.0, 2.0, 500.0],
                    distance: 500.0,
                    focal: 400.0,
                    width: 64,
                    height: 48,
                    source_margin: margin,
                };
                for (i, cam) in rig.cameras().unwrap().iter().enumerate() {
                    let m = if i == 0 { 0.0 } else { margin as f64 };
                    let (p, _) = cam.project_world(&Point3::from(rig.target)).unwrap();
                    assert_abs_diff_eq!(p.u, 31.5 + m, epsilon = 1e-9);
                    assert_abs_diff_eq!(p.v, 23.5 + m, epsilon = 1e-9);
                    assert_eq!(cam.width, 64 + 2 * m as usize);
                }
            }
        }
    }
}
