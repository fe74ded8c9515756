//! Running the cascade with a different number of views than its volume slots.
//!
//! With more views, the `N-2` most useful sources stay fixed and the rest take
//! turns in the last slot; the per-iteration depth maps are fused by taking,
//! per pixel, the most confident one. With fewer views, the most useful
//! source volume is duplicated into the empty slots.

use nalgebra::Point3;
use ndarray::{ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::cost::PairwiseCostVolume;
use crate::error::{Error, Result};
use crate::geometry::{Camera, PixelCoord};
use crate::pipeline::{run_cascade, run_cascade_with, CascadeConfig, CascadeOutput, DepthEstimate, SlotFill};

/// Piecewise Gaussian over the triangulation angle (degrees).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UsefulnessParams {
    pub theta0_deg: f64,
    pub sigma_below_deg: f64,
    pub sigma_above_deg: f64,
}

impl Default for UsefulnessParams {
    fn default() -> Self {
        UsefulnessParams {
            theta0_deg: 5.0,
            sigma_below_deg: 1.0,
            sigma_above_deg: 10.0,
        }
    }
}

impl UsefulnessParams {
    pub fn gain(&self, theta_deg: f64) -> f64 {
        let sigma = if theta_deg <= self.theta0_deg {
            self.sigma_below_deg
        } else {
            self.sigma_above_deg
        };
        (-(theta_deg - self.theta0_deg).powi(2) / (2.0 * sigma * sigma)).exp()
    }
}

/// Angle in degrees at `point` between the rays towards `a` and `b`.
fn ray_angle_deg(point: &Point3<f64>, a: &Point3<f64>, b: &Point3<f64>) -> f64 {
    let (ra, rb) = (a - point, b - point);
    let denom = ra.norm() * rb.norm();
    if denom == 0.0 {
        return 0.0;
    }
    (ra.dot(&rb) / denom).clamp(-1.0, 1.0).acos().to_degrees()
}

/// One score per source camera, in input order.
pub fn usefulness_scores(
    ref_cam: &Camera,
    src_cams: &[Camera],
    anchors: &[Point3<f64>],
    params: &UsefulnessParams,
) -> Result<Vec<f64>> {
    if anchors.is_empty() {
        return Err(Error::arg("usefulness scores need at least one anchor point"));
    }
    let rc = ref_cam.center();
    Ok(src_cams
        .iter()
        .map(|cam| {
            let sc = cam.center();
            let mut terms: Vec<f64> = anchors.iter().map(|p| params.gain(ray_angle_deg(p, &rc, &sc))).collect();
            terms.sort_unstable_by(f64::total_cmp);
            terms.iter().sum()
        })
        .collect())
}

/// Source ids sorted by descending score, ties to the lower id.
fn ranked(scores: &[f64]) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..scores.len()).collect();
    ids.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    ids
}

/// Source subsets for the more-views path. Ids index the score list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationPlan {
    pub fixed: Vec<usize>,
    /// One entry per iteration: the `N-1` source ids, fixed ids first.
    pub iterations: Vec<Vec<usize>>,
}

/// `scores` holds one value per source, so `N' = scores.len() + 1`.
pub fn plan_iterations(scores: &[f64], train_views: usize, views: usize) -> Result<IterationPlan> {
    if train_views < 3 {
        return Err(Error::arg("iteration planning needs N >= 3"));
    }
    if views <= train_views {
        return Err(Error::arg(format!("{views} views do not exceed N = {train_views}")));
    }
    if scores.len() != views - 1 {
        return Err(Error::arg(format!("expected {} scores, got {}", views - 1, scores.len())));
    }
    let order = ranked(scores);
    let (fixed, rotating) = order.split_at(train_views - 2);
    let iterations = rotating
        .iter()
        .map(|&r| fixed.iter().copied().chain(std::iter::once(r)).collect())
        .collect();
    Ok(IterationPlan {
        fixed: fixed.to_vec(),
        iterations,
    })
}

/// Appends copies of the highest-scoring volume until there are `N-1` volumes.
pub fn pad_fewer_views(volumes: &[PairwiseCostVolume], scores: &[f64], train_views: usize) -> Result<Vec<PairwiseCostVolume>> {
    let views = volumes.len() + 1;
    if volumes.is_empty() || views >= train_views {
        return Err(Error::arg(format!(
            "padding needs 2 <= N' < N, got N' = {views}, N = {train_views}"
        )));
    }
    if scores.len() != volumes.len() {
        return Err(Error::arg("one score per volume is required"));
    }
    let top = ranked(scores)[0];
    let mut out = volumes.to_vec();
    out.extend(std::iter::repeat_n(volumes[top].clone(), train_views - views));
    Ok(out)
}

/// Per pixel, the depth and confidence of the most confident estimate
/// (earliest on ties). Valid where any estimate is valid.
pub fn fuse_by_confidence(estimates: &[DepthEstimate]) -> Result<DepthEstimate> {
    let first = estimates.first().ok_or_else(|| Error::arg("nothing to fuse"))?;
    if estimates.iter().any(|e| e.dim() != first.dim()) {
        return Err(Error::arg("estimates differ in shape"));
    }
    let mut out = first.clone();
    for est in &estimates[1..] {
        Zip::from(&mut out.depth)
            .and(&mut out.confidence)
            .and(&mut out.valid)
            .and(&est.depth)
            .and(&est.confidence)
            .and(&est.valid)
            .for_each(|d, c, v, &ed, &ec, &ev| {
                if ec > *c {
                    *d = ed;
                    *c = ec;
                }
                *v |= ev;
            });
    }
    Ok(out)
}

/// A `per_side x per_side` grid of reference pixels back-projected at `depth`.
/// Usable as anchors when no scene points are known.
pub fn frustum_anchors(reference: &Camera, depth: f64, per_side: usize) -> Vec<Point3<f64>> {
    let n = per_side.max(1);
    let at = |i: usize, len: usize| (i as f64 + 0.5) / n as f64 * len as f64 - 0.5;
    (0..n * n)
        .map(|k| reference.unproject(PixelCoord::new(at(k % n, reference.width), at(k / n, reference.height)), depth))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlexMode {
    Standard,
    Padded,
    Iterated,
}

#[derive(Debug, Clone)]
pub struct FlexOutput {
    pub mode: FlexMode,
    pub scores: Vec<f64>,
    pub plan: Option<IterationPlan>,
    pub runs: Vec<CascadeOutput>,
    pub fused: DepthEstimate,
}

/// Runs the cascade on any number `N' >= 2` of views.
pub fn run_flexible(
    images: &[ArrayView2<f32>],
    cameras: &[Camera],
    config: &CascadeConfig,
    anchors: &[Point3<f64>],
    params: &UsefulnessParams,
) -> Result<FlexOutput> {
    if images.len() < 2 || images.len() != cameras.len() {
        return Err(Error::arg("need matching images and cameras, at least two of each"));
    }
    let views = images.len();
    let n = config.train_views;
    let scores = usefulness_scores(&cameras[0], &cameras[1..], anchors, params)?;
    if views == n {
        let run = run_cascade(images, cameras, config)?;
        let fused = run.final_estimate().clone();
        return Ok(FlexOutput {
            mode: FlexMode::Standard,
            scores,
            plan: None,
            runs: vec![run],
            fused,
        });
    }
    if views < n {
        let run = run_cascade_with(images, cameras, config, SlotFill::Pad { scores: &scores })?;
        let fused = run.final_estimate().clone();
        return Ok(FlexOutput {
            mode: FlexMode::Padded,
            scores,
            plan: None,
            runs: vec![run],
            fused,
        });
    }
    let plan = plan_iterations(&scores, n, views)?;
    let runs = plan
        .iterations
        .iter()
        .map(|ids| {
            let mut imgs = vec![images[0]];
            let mut cams = vec![cameras[0].clone()];
            for &i in ids {
                imgs.push(images[i + 1]);
                cams.push(cameras[i + 1].clone());
            }
            run_cascade(&imgs, &cams, config)
        })
        .collect::<Result<Vec<_>>>()?;
    let finals: Vec<DepthEstimate> = runs.iter().map(|r| r.final_estimate().clone()).collect();
    let fused = fuse_by_confidence(&finals)?;
    Ok(FlexOutput {
        mode: FlexMode::Iterated,
        scores,
        plan: Some(plan),
        runs,
        fused,
    })
}
