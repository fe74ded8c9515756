//! Plane-sweep cost construction: handcrafted features, depth hypotheses,
//! pairwise dot-product volumes, per-view pre-regularisation and the
//! view-preserved stack.

use ndarray::{s, Array2, Array3, Array4, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{bilinear_sample_channels, Camera, Projection, RelativeProjector};

/// Output channels per pairwise volume. Fixed at one; a wider group-wise
/// correlation would add an axis to [`CostVolume`].
pub const COST_CHANNELS: usize = 1;

/// Channels produced by [`extract_features`].
pub const FEATURE_CHANNELS: usize = 3;

const NORM_EPS: f32 = 1e-4;
const WINDOW_RADIUS: isize = 2;

/// `H x W x C` feature grid for one cascade stage.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub values: Array3<f32>,
    pub stage: usize,
}

impl FeatureMap {
    pub fn dim(&self) -> (usize, usize, usize) {
        self.values.dim()
    }
}

/// Block-mean downsampling by an integer factor.
pub fn area_downsample(image: ArrayView2<f32>, factor: usize) -> Result<Array2<f32>> {
    let (h, w) = image.dim();
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::arg(format!("{w}x{h} image is not divisible by {factor}")));
    }
    if factor == 1 {
        return Ok(image.to_owned());
    }
    let norm = (factor * factor) as f64;
    Ok(Array2::from_shape_fn((h / factor, w / factor), |(y, x)| {
        let block = image.slice(s![y * factor..(y + 1) * factor, x * factor..(x + 1) * factor]);
        (block.iter().map(|&v| v as f64).sum::<f64>() / norm) as f32
    }))
}

fn clamp_idx(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// 5x5 mean with edge replication.
fn window_mean(a: &Array2<f32>) -> Array2<f32> {
    let (h, w) = a.dim();
    let taps = 2 * WINDOW_RADIUS + 1;
    let mut rows = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f64;
            for dx in -WINDOW_RADIUS..=WINDOW_RADIUS {
                acc += a[[y, clamp_idx(x as isize + dx, w)]] as f64;
            }
            rows[[y, x]] = acc;
        }
    }
    let n = (taps * taps) as f64;
    Array2::from_shape_fn((h, w), |(y, x)| {
        let mut acc = 0.0f64;
        for dy in -WINDOW_RADIUS..=WINDOW_RADIUS {
            acc += rows[[clamp_idx(y as isize + dy, h), x]];
        }
        (acc / n) as f32
    })
}

fn normalize_local(c: Array2<f32>) -> Array2<f32> {
    let mean = window_mean(&c);
    let sq = window_mean(&c.mapv(|v| v * v));
    let mut out = c;
    Zip::from(&mut out).and(&mean).and(&sq).for_each(|v, &m, &m2| {
        let sd = (m2 - m * m).max(0.0).sqrt();
        *v /= sd + NORM_EPS;
    });
    out
}

/// Three brightness-invariant channels at `1/downsample` resolution:
/// locally mean-subtracted intensity and central-difference gradients along
/// x and y, each divided by its 5x5 local standard deviation.
pub fn extract_features(image: ArrayView2<f32>, downsample: usize, stage: usize) -> Result<FeatureMap> {
    if image.iter().any(|v| !v.is_finite()) {
        return Err(Error::arg("image contains non-finite values"));
    }
    let img = area_downsample(image, downsample)?;
    let (h, w) = img.dim();
    let centered = &img - &window_mean(&img);
    let grad_x = Array2::from_shape_fn((h, w), |(y, x)| {
        let l = img[[y, clamp_idx(x as isize - 1, w)]];
        let r = img[[y, clamp_idx(x as isize + 1, w)]];
        0.5 * (r - l)
    });
    let grad_y = Array2::from_shape_fn((h, w), |(y, x)| {
        let u = img[[clamp_idx(y as isize - 1, h), x]];
        let d = img[[clamp_idx(y as isize + 1, h), x]];
        0.5 * (d - u)
    });
    let mut values = Array3::zeros((h, w, FEATURE_CHANNELS));
    for (c, ch) in [centered, grad_x, grad_y].into_iter().enumerate() {
        values.index_axis_mut(Axis(2), c).assign(&normalize_local(ch));
    }
    Ok(FeatureMap { values, stage })
}

/// Per-pixel depth samples, strictly increasing along the last axis.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthHypotheses {
    /// `H x W x M` depths.
    pub values: Array3<f64>,
    pub interval: f64,
}

impl DepthHypotheses {
    pub fn count(&self) -> usize {
        self.values.dim().2
    }

    pub fn shape(&self) -> (usize, usize) {
        let (h, w, _) = self.values.dim();
        (h, w)
    }

    /// Index of the hypothesis nearest to `depth` at pixel `(y, x)`; ties go
    /// to the lower index.
    pub fn nearest_bin(&self, y: usize, x: usize, depth: f64) -> usize {
        let lane = self.values.slice(s![y, x, ..]);
        let mut best = 0;
        let mut best_err = f64::INFINITY;
        for (j, &d) in lane.iter().enumerate() {
            let err = (d - depth).abs();
            if err < best_err {
                best = j;
                best_err = err;
            }
        }
        best
    }
}

/// Where the hypotheses of a stage come from.
#[derive(Debug, Clone, Copy)]
pub enum HypothesisSeed<'a> {
    /// Coarsest stage: `d_j = d_min + j * interval` at every pixel.
    Range { d_min: f64 },
    /// Refinement: centred on the (bilinearly upsampled) previous depth map.
    Previous(ArrayView2<'a, f64>),
}

pub fn sample_hypotheses(
    seed: HypothesisSeed<'_>,
    shape: (usize, usize),
    count: usize,
    interval: f64,
) -> Result<DepthHypotheses> {
    if count < 2 {
        return Err(Error::arg(format!("need at least 2 depth hypotheses, got {count}")));
    }
    if !(interval > 0.0) || !interval.is_finite() {
        return Err(Error::config(format!("depth interval must be positive, got {interval}")));
    }
    let (h, w) = shape;
    let values = match seed {
        HypothesisSeed::Range { d_min } => {
            if !(d_min > 0.0) {
                return Err(Error::config(format!("minimum depth must be positive, got {d_min}")));
            }
            Array3::from_shape_fn((h, w, count), |(_, _, j)| d_min + j as f64 * interval)
        }
        HypothesisSeed::Previous(prev) => {
            let center = upsample_bilinear(prev, shape);
            let half = (count as f64 - 1.0) / 2.0;
            Array3::from_shape_fn((h, w, count), |(y, x, j)| {
                let lowest = center[[y, x]] - half * interval;
                let shift = (0.5 * interval - lowest).max(0.0);
                lowest + shift + j as f64 * interval
            })
        }
    };
    Ok(DepthHypotheses { values, interval })
}

/// Bilinear resampling on pixel centres, clamped at the borders.
pub fn upsample_bilinear(src: ArrayView2<f64>, shape: (usize, usize)) -> Array2<f64> {
    let (h0, w0) = src.dim();
    let (h, w) = shape;
    let sy = h0 as f64 / h as f64;
    let sx = w0 as f64 / w as f64;
    Array2::from_shape_fn((h, w), |(y, x)| {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (h0 - 1) as f64);
        let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (w0 - 1) as f64);
        let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(h0 - 1), (x0 + 1).min(w0 - 1));
        let (ay, ax) = (fy - y0 as f64, fx - x0 as f64);
        let top = src[[y0, x0]] * (1.0 - ax) + src[[y0, x1]] * ax;
        let bottom = src[[y1, x0]] * (1.0 - ax) + src[[y1, x1]] * ax;
        top * (1.0 - ay) + bottom * ay
    })
}

/// `H x W x D` matching volume with its validity mask. Invalid cells hold 0.
#[derive(Debug, Clone, PartialEq)]
pub struct CostVolume {
    pub values: Array3<f32>,
    pub valid: Array3<bool>,
}

impl CostVolume {
    pub fn new(values: Array3<f32>, valid: Array3<bool>) -> Result<Self> {
        if values.dim() != valid.dim() {
            return Err(Error::arg("cost values and mask differ in shape"));
        }
        Ok(Self { values, valid })
    }

    pub fn zeros(shape: (usize, usize, usize)) -> Self {
        Self {
            values: Array3::zeros(shape),
            valid: Array3::from_elem(shape, false),
        }
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.values.dim()
    }

    /// Index of the maximal valid cell along depth at `(y, x)` (lowest index
    /// on ties), or `None` when no cell is valid.
    pub fn argmax(&self, y: usize, x: usize) -> Option<usize> {
        let mut best: Option<(usize, f32)> = None;
        for j in 0..self.dim().2 {
            if self.valid[[y, x, j]] && best.is_none_or(|(_, v)| self.values[[y, x, j]] > v) {
                best = Some((j, self.values[[y, x, j]]));
            }
        }
        best.map(|(j, _)| j)
    }

    pub fn mapv(&self, f: impl Fn(f32) -> f32) -> Self {
        let mut values = self.values.mapv(f);
        Zip::from(&mut values).and(&self.valid).for_each(|v, &ok| {
            if !ok {
                *v = 0.0
            }
        });
        Self {
            values,
            valid: self.valid.clone(),
        }
    }
}

/// Matching volume between the reference and one source view.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseCostVolume {
    pub volume: CostVolume,
    pub source_id: usize,
}

/// Dot-product similarity between reference features and source features
/// warped at every hypothesis: `cost(p, j) = (1/C) Σ_c F0_c(p) F_c(p'_j)`.
pub fn pairwise_cost(
    reference: &FeatureMap,
    source: &FeatureMap,
    ref_cam: &Camera,
    src_cam: &Camera,
    hyps: &DepthHypotheses,
    source_id: usize,
) -> Result<PairwiseCostVolume> {
    let (h, w, c) = reference.dim();
    let (sh, sw, sc) = source.dim();
    if reference.stage != source.stage || c != sc {
        return Err(Error::arg("reference and source features differ in stage or channels"));
    }
    if (h, w) != (ref_cam.height, ref_cam.width) || (sh, sw) != (src_cam.height, src_cam.width) {
        return Err(Error::arg("feature grids do not match the camera resolutions"));
    }
    if hyps.shape() != (h, w) {
        return Err(Error::arg("hypothesis grid does not match the reference features"));
    }
    let d = hyps.count();
    let proj = RelativeProjector::new(ref_cam, src_cam);
    let src = source.values.view();
    let mut values = Array3::<f32>::zeros((h, w, d));
    let mut valid = Array3::from_elem((h, w, d), false);
    values
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(valid.axis_iter_mut(Axis(0)).into_par_iter())
        .enumerate()
        .for_each(|(y, (mut vrow, mut mrow))| {
            let mut buf = vec![0f32; c];
            for x in 0..w {
                let f0 = reference.values.slice(s![y, x, ..]);
                for j in 0..d {
                    let ok = match proj.project(x as f64, y as f64, hyps.values[[y, x, j]]) {
                        Projection::Visible { pixel, .. } => bilinear_sample_channels(src, pixel, &mut buf),
                        Projection::BehindCamera => false,
                    };
                    if ok {
                        let dot: f64 = f0.iter().zip(&buf).map(|(&a, &b)| a as f64 * b as f64).sum();
                        vrow[[x, j]] = (dot / c as f64) as f32;
                        mrow[[x, j]] = true;
                    }
                }
            }
        });
    Ok(PairwiseCostVolume {
        volume: CostVolume { values, valid },
        source_id,
    })
}

fn box3_clamped(a: &Array3<f64>, axis: usize) -> Array3<f64> {
    let (h, w, d) = a.dim();
    let src = a.as_standard_layout();
    let src = src.as_slice().expect("standard layout");
    let (len, stride) = match axis {
        0 => (h, w * d),
        1 => (w, d),
        _ => (d, 1),
    };
    let mut out = vec![0.0f64; src.len()];
    for (block, dst) in src.chunks(len * stride).zip(out.chunks_mut(len * stride)) {
        for i in 0..len {
            let lo = i.saturating_sub(1) * stride;
            let hi = (i + 1).min(len - 1) * stride;
            let mid = i * stride;
            for k in 0..stride {
                dst[mid + k] = block[lo + k] + block[mid + k] + block[hi + k];
            }
        }
    }
    Array3::from_shape_vec((h, w, d), out).expect("shape matches")
}

/// Masked, renormalised 3x3x3 box filter (y, x, depth) with edge replication.
/// Invalid cells contribute nothing and stay invalid (value 0).
pub fn masked_box_filter(v: &CostVolume) -> CostVolume {
    let mut num = Array3::<f64>::zeros(v.dim());
    let mut den = Array3::<f64>::zeros(v.dim());
    Zip::from(&mut num)
        .and(&mut den)
        .and(&v.values)
        .and(&v.valid)
        .for_each(|n, d, &val, &ok| {
            if ok {
                *n = val as f64;
                *d = 1.0;
            }
        });
    for axis in 0..3 {
        num = box3_clamped(&num, axis);
        den = box3_clamped(&den, axis);
    }
    let mut values = Array3::<f32>::zeros(v.dim());
    Zip::from(&mut values)
        .and(&v.valid)
        .and(&num)
        .and(&den)
        .for_each(|o, &ok, &n, &d| {
            if ok && d > 0.0 {
                *o = (n / d) as f32;
            }
        });
    CostVolume {
        values,
        valid: v.valid.clone(),
    }
}

/// Light per-view smoothing applied before the volumes are stacked.
pub fn pre_regularize(v: &PairwiseCostVolume) -> PairwiseCostVolume {
    PairwiseCostVolume {
        volume: masked_box_filter(&v.volume),
        source_id: v.source_id,
    }
}

/// Pairwise volumes stacked along a trailing view axis: `H x W x D x V`.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewPreservedCost {
    pub values: Array4<f32>,
    pub valid: Array4<bool>,
    /// `channel_order[k]` is the source id stored in channel `k`.
    pub channel_order: Vec<usize>,
}

impl ViewPreservedCost {
    pub fn dim(&self) -> (usize, usize, usize, usize) {
        self.values.dim()
    }

    pub fn views(&self) -> usize {
        self.values.dim().3
    }

    pub fn channel(&self, k: usize) -> CostVolume {
        CostVolume {
            values: self.values.index_axis(Axis(3), k).to_owned(),
            valid: self.valid.index_axis(Axis(3), k).to_owned(),
        }
    }
}

pub fn assemble_view_preserved(volumes: &[PairwiseCostVolume]) -> Result<ViewPreservedCost> {
    let first = volumes
        .first()
        .ok_or_else(|| Error::arg("cannot assemble an empty list of volumes"))?;
    let (h, w, d) = first.volume.dim();
    if volumes.iter().any(|v| v.volume.dim() != (h, w, d)) {
        return Err(Error::arg("pairwise volumes differ in shape"));
    }
    let n = volumes.len();
    let mut values = Array4::zeros((h, w, d, n));
    let mut valid = Array4::from_elem((h, w, d, n), false);
    for (k, v) in volumes.iter().enumerate() {
        values.index_axis_mut(Axis(3), k).assign(&v.volume.values);
        valid.index_axis_mut(Axis(3), k).assign(&v.volume.valid);
    }
    Ok(ViewPreservedCost {
        values,
        valid,
        channel_order: volumes.iter().map(|v| v.source_id).collect(),
    })
}

/// Reorders channels so that output channel `k` is input channel `perm[k]`.
pub fn permute_views(cvp: &ViewPreservedCost, perm: &[usize]) -> Result<ViewPreservedCost> {
    let n = cvp.views();
    let mut seen = vec![false; n];
    if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
        return Err(Error::arg(format!("{perm:?} is not a permutation of {n} channels")));
    }
    let mut out = cvp.clone();
    for (k, &p) in perm.iter().enumerate() {
        out.values.index_axis_mut(Axis(3), k).assign(&cvp.values.index_axis(Axis(3), p));
        out.valid.index_axis_mut(Axis(3), k).assign(&cvp.valid.index_axis(Axis(3), p));
        out.channel_order[k] = cvp.channel_order[p];
    }
    Ok(out)
}

/// Uniform random permutation of the view axis (Fisher-Yates on a seeded ChaCha8 stream).
pub fn shuffle_permutation(views: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..views).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    perm
}

pub fn shuffle_views(cvp: &ViewPreservedCost, seed: u64) -> ViewPreservedCost {
    permute_views(cvp, &shuffle_permutation(cvp.views(), seed)).expect("generated permutation is valid")
}
