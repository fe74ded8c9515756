//! Measurements against ground truth and the strategy comparison harness.

use std::collections::HashMap;
use std::time::Instant;

use nalgebra::Point3;
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::aggregation::AggregationStrategy;
use crate::cost::{CostVolume, DepthHypotheses, PairwiseCostVolume};
use crate::error::{Error, Result};
use crate::geometry::Camera;
use rayon::prelude::*;
use crate::pipeline::{run_cascade, CascadeConfig, DepthEstimate};
use crate::geometry::PixelCoord;
use crate::scene::{RenderedView, SceneDefinition};

/// A fraction over a counted pixel set. `value` is `None` when nothing was
/// counted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub value: Option<f64>,
    pub hits: usize,
    pub counted: usize,
}

impl Ratio {
    pub fn new(hits: usize, counted: usize) -> Self {
        Self {
            value: (counted > 0).then(|| hits as f64 / counted as f64),
            hits,
            counted,
        }
    }

    pub fn is_defined(&self) -> bool {
        self.value.is_some()
    }

    /// Pools the tallies of several ratios.
    pub fn pooled<'a>(parts: impl IntoIterator<Item = &'a Ratio>) -> Self {
        let (hits, counted) = parts.into_iter().fold((0, 0), |(h, c), r| (h + r.hits, c + r.counted));
        Self::new(hits, counted)
    }
}

fn gt_usable(gt: f64) -> bool {
    gt.is_finite() && gt > 0.0
}

/// GT bin of a pixel, or `None` when its GT lies outside the hypothesis span
/// by more than half an interval.
fn gt_bin(hyps: &DepthHypotheses, y: usize, x: usize, gt: f64) -> Option<usize> {
    if !gt_usable(gt) {
        return None;
    }
    let m = hyps.count();
    let half = 0.5 * hyps.interval;
    let (lo, hi) = (hyps.values[[y, x, 0]], hyps.values[[y, x, m - 1]]);
    if gt < lo - half || gt > hi + half {
        return None;
    }
    Some(hyps.nearest_bin(y, x, gt))
}

fn check_stage_shapes(pairwise: &[PairwiseCostVolume], hyps: &DepthHypotheses, gt: ArrayView2<f64>) -> Result<()> {
    let (h, w) = hyps.shape();
    if gt.dim() != (h, w) {
        return Err(Error::arg("ground truth does not match the stage grid"));
    }
    if pairwise.iter().any(|p| p.volume.dim() != hyps.values.dim()) {
        return Err(Error::arg("pairwise volume does not match the hypotheses"));
    }
    Ok(())
}

/// Pixels where at least one pairwise volume peaks at the GT bin.
fn informative_pixels(
    pairwise: &[PairwiseCostVolume],
    hyps: &DepthHypotheses,
    gt: ArrayView2<f64>,
) -> Vec<(usize, usize, usize)> {
    let (h, w) = hyps.shape();
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let Some(bin) = gt_bin(hyps, y, x, gt[[y, x]]) else {
                continue;
            };
            if pairwise.iter().any(|p| p.volume.argmax(y, x) == Some(bin)) {
                out.push((y, x, bin));
            }
        }
    }
    out
}

/// Share of informative pixels whose final depth stays in the GT bin
/// (within half an interval of its centre).
pub fn preservation_ratio(
    pairwise: &[PairwiseCostVolume],
    final_depth: &DepthEstimate,
    gt: ArrayView2<f64>,
    hyps: &DepthHypotheses,
) -> Result<Ratio> {
    check_stage_shapes(pairwise, hyps, gt)?;
    if final_depth.dim() != gt.dim() {
        return Err(Error::arg("depth map does not match the stage grid"));
    }
    let pixels = informative_pixels(pairwise, hyps, gt);
    let half = 0.5 * hyps.interval;
    let hits = pixels
        .iter()
        .filter(|&&(y, x, bin)| {
            final_depth.valid[[y, x]] && (final_depth.depth[[y, x]] - hyps.values[[y, x, bin]]).abs() <= half
        })
        .count();
    Ok(Ratio::new(hits, pixels.len()))
}

/// Share of informative pixels whose aggregated volume still peaks at the GT bin.
pub fn aggregated_preservation_ratio(
    pairwise: &[PairwiseCostVolume],
    aggregated: &CostVolume,
    gt: ArrayView2<f64>,
    hyps: &DepthHypotheses,
) -> Result<Ratio> {
    check_stage_shapes(pairwise, hyps, gt)?;
    if aggregated.dim() != hyps.values.dim() {
        return Err(Error::arg("aggregated volume does not match the hypotheses"));
    }
    let pixels = informative_pixels(pairwise, hyps, gt);
    let hits = pixels
        .iter()
        .filter(|&&(y, x, bin)| aggregated.argmax(y, x) == Some(bin))
        .count();
    Ok(Ratio::new(hits, pixels.len()))
}

/// Share of pixels with GT whose prediction is valid and within `threshold`.
pub fn depth_accuracy(pred: &DepthEstimate, gt: ArrayView2<f64>, threshold: f64) -> Result<Ratio> {
    if pred.dim() != gt.dim() {
        return Err(Error::arg("prediction and ground truth differ in shape"));
    }
    if !(threshold >= 0.0) {
        return Err(Error::arg("threshold must be non-negative"));
    }
    let mut hits = 0;
    let mut counted = 0;
    for ((idx, &g), &d) in gt.indexed_iter().zip(pred.depth.iter()) {
        if !gt_usable(g) {
            continue;
        }
        counted += 1;
        if pred.valid[idx] && (d - g).abs() <= threshold {
            hits += 1;
        }
    }
    Ok(Ratio::new(hits, counted))
}

/// Mean absolute error over pixels with GT and a valid prediction.
pub fn mean_abs_error(pred: &DepthEstimate, gt: ArrayView2<f64>) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((idx, &g), &d) in gt.indexed_iter().zip(pred.depth.iter()) {
        if gt_usable(g) && pred.valid[idx] {
            sum += (d - g).abs();
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CloudMetrics {
    pub accuracy: f64,
    pub completeness: f64,
    pub overall: f64,
}

/// Uniform hash grid with cell side equal to the distance cap, so every point
/// closer than the cap sits in one of the 27 cells around a query.
struct PointGrid<'a> {
    points: &'a [Point3<f64>],
    cell: f64,
    cells: HashMap<[i64; 3], Vec<usize>>,
}

impl<'a> PointGrid<'a> {
    fn new(points: &'a [Point3<f64>], cell: f64) -> Self {
        let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, cell)).or_default().push(i);
        }
        Self { points, cell, cells }
    }

    fn key(p: &Point3<f64>, cell: f64) -> [i64; 3] {
        [
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        ]
    }

    /// Distance to the nearest point, capped at the cell size.
    fn capped_distance(&self, q: &Point3<f64>) -> f64 {
        let k = Self::key(q, self.cell);
        let mut best = self.cell * self.cell;
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if let Some(ids) = self.cells.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        for &i in ids {
                            best = best.min((self.points[i] - q).norm_squared());
                        }
                    }
                }
            }
        }
        best.sqrt()
    }
}

fn mean_capped(from: &[Point3<f64>], to: &[Point3<f64>], cap: f64) -> f64 {
    let grid = PointGrid::new(to, cap);
    from.iter().map(|p| grid.capped_distance(p)).sum::<f64>() / from.len() as f64
}

/// Accuracy (predicted to GT), completeness (GT to predicted) and their mean,
/// with nearest-neighbour distances capped at `dist_cap`.
pub fn cloud_metrics(pred: &[Point3<f64>], gt: &[Point3<f64>], dist_cap: f64) -> Result<CloudMetrics> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::arg("cloud metrics need two non-empty clouds"));
    }
    if !(dist_cap > 0.0) || !dist_cap.is_finite() {
        return Err(Error::arg("distance cap must be positive"));
    }
    let accuracy = mean_capped(pred, gt, dist_cap);
    let completeness = mean_capped(gt, pred, dist_cap);
    Ok(CloudMetrics {
        accuracy,
        completeness,
        overall: 0.5 * (accuracy + completeness),
    })
}

/// Surface points hit by each camera's rays on a `subdiv x subdiv` grid per
/// pixel. A dense stand-in for the visible GT surface.
pub fn gt_surface_cloud(scene: &SceneDefinition, cams: &[Camera], subdiv: usize) -> Result<Vec<Point3<f64>>> {
    if subdiv == 0 {
        return Err(Error::arg("subdivision must be at least 1"));
    }
    let step = 1.0 / subdiv as f64;
    let offset = 0.5 * step - 0.5;
    let mut out = Vec::new();
    for cam in cams {
        let rows: Vec<Vec<Point3<f64>>> = (0..cam.height * subdiv)
            .into_par_iter()
            .map(|j| {
                let v = j as f64 * step + offset;
                (0..cam.width * subdiv)
                    .filter_map(|i| {
                        let p = PixelCoord::new(i as f64 * step + offset, v);
                        scene.cast_ray(cam, p).map(|hit| cam.unproject(p, hit.t))
                    })
                    .collect()
            })
            .collect();
        out.extend(rows.into_iter().flatten());
    }
    Ok(out)
}

/// Back-projects every positive depth of every map at its pixel centre.
pub fn backproject_depths(depths: &[ArrayView2<f64>], cams: &[Camera]) -> Result<Vec<Point3<f64>>> {
    if depths.len() != cams.len() {
        return Err(Error::arg("need one camera per depth map"));
    }
    let mut out = Vec::new();
    for (d, cam) in depths.iter().zip(cams) {
        if d.dim() != (cam.height, cam.width) {
            return Err(Error::arg("depth map does not match its camera"));
        }
        out.extend(
            d.indexed_iter()
                .filter(|(_, &z)| z > 0.0 && z.is_finite())
                .map(|((y, x), &z)| cam.unproject(PixelCoord::new(x as f64, y as f64), z)),
        );
    }
    Ok(out)
}

/// Rendered views of one scene, reference first.
#[derive(Debug, Clone)]
pub struct EvalScene {
    pub name: String,
    pub images: Vec<Array2<f32>>,
    pub cameras: Vec<Camera>,
    pub gt_depth: Array2<f64>,
}

impl EvalScene {
    pub fn from_views(name: impl Into<String>, views: &[RenderedView]) -> Result<Self> {
        let first = views.first().ok_or_else(|| Error::arg("scene has no views"))?;
        Ok(Self {
            name: name.into(),
            images: views.iter().map(|v| v.image.clone()).collect(),
            cameras: views.iter().map(|v| v.camera.clone()).collect(),
            gt_depth: first.gt_depth.clone(),
        })
    }
}

/// Per-stage wall clock of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub stages: Vec<f64>,
    pub total: f64,
}

/// Outcome of one strategy on one scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneResult {
    pub scene: String,
    pub strategy: String,
    /// Informative pixels whose final depth stays in the GT bin.
    pub preservation: Ratio,
    /// Informative pixels whose aggregated volume still peaks at the GT bin.
    pub preservation_aggregated: Ratio,
    pub depth_accuracy: Ratio,
    pub mean_abs_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cloud: Option<CloudMetrics>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub timings: Option<Timings>,
}

/// Pooled results of one strategy over a suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: String,
    pub preservation: Ratio,
    pub preservation_aggregated: Ratio,
    pub depth_accuracy: Ratio,
}

/// Everything a run or comparison reports. Serialises to TOML; the per-scene
/// rows also go to CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub version: u32,
    /// Which stage's hypotheses define the GT bin.
    pub measured_stage: String,
    pub depth_threshold: f64,
    pub config: CascadeConfig,
    pub summaries: Vec<StrategySummary>,
    pub scenes: Vec<SceneResult>,
}

pub const REPORT_VERSION: u32 = 1;

impl MetricsReport {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::format("report", e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let report: Self = toml::from_str(text).map_err(|e| Error::format("report", e.to_string()))?;
        if report.version != REPORT_VERSION {
            return Err(Error::format("report", format!("unsupported version {}", report.version)));
        }
        Ok(report)
    }

    pub fn summary(&self, strategy: &str) -> Option<&StrategySummary> {
        self.summaries.iter().find(|s| s.strategy == strategy)
    }

    /// Drops wall-clock timings so reports of identical runs compare equal.
    pub fn without_timings(mut self) -> Self {
        for s in &mut self.scenes {
            s.timings = None;
        }
        self
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::format("csv", e.to_string());
        w.write_record([
            "scene",
            "strategy",
            "preservation",
            "preservation_informative",
            "preservation_aggregated",
            "depth_accuracy",
            "mean_abs_error",
            "cloud_accuracy",
            "cloud_completeness",
            "cloud_overall",
            "seconds",
        ])
        .map_err(io)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for s in &self.scenes {
            w.write_record([
                s.scene.clone(),
                s.strategy.clone(),
                opt(s.preservation.value),
                s.preservation.counted.to_string(),
                opt(s.preservation_aggregated.value),
                opt(s.depth_accuracy.value),
                opt(s.mean_abs_error),
                opt(s.cloud.map(|c| c.accuracy)),
                opt(s.cloud.map(|c| c.completeness)),
                opt(s.cloud.map(|c| c.overall)),
                opt(s.timings.as_ref().map(|t| t.total)),
            ])
            .map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::format("csv", e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::format("csv", e.to_string()))
    }
}

/// Runs the cascade on one scene and measures it at the finest stage.
pub fn evaluate_scene(scene: &EvalScene, config: &CascadeConfig, threshold: f64) -> Result<SceneResult> {
    let started = Instant::now();
    let views: Vec<_> = scene.images.iter().map(|i| i.view()).collect();
    let out = run_cascade(&views, &scene.cameras, config)?;
    let total = started.elapsed().as_secs_f64();
    let last = out.final_stage();
    let gt = scene.gt_depth.view();
    Ok(SceneResult {
        scene: scene.name.clone(),
        strategy: config.aggregation.label(),
        preservation: preservation_ratio(&last.pairwise, &last.estimate, gt, &last.hypotheses)?,
        preservation_aggregated: aggregated_preservation_ratio(&last.pairwise, &last.aggregated, gt, &last.hypotheses)?,
        depth_accuracy: depth_accuracy(&last.estimate, gt, threshold)?,
        mean_abs_error: mean_abs_error(&last.estimate, gt),
        cloud: None,
        timings: Some(Timings {
            stages: out.stages.iter().map(|s| s.seconds).collect(),
            total,
        }),
    })
}

/// Runs every strategy on every scene with otherwise identical settings.
/// The depth-accuracy threshold is twice the finest interval.
pub fn compare_strategies(
    suite: &[EvalScene],
    strategies: &[AggregationStrategy],
    config: &CascadeConfig,
) -> Result<MetricsReport> {
    config.validate()?;
    if suite.is_empty() || strategies.is_empty() {
        return Err(Error::arg("comparison needs at least one scene and one strategy"));
    }
    let threshold = 2.0 * config.finest_interval();
    let mut scenes = Vec::new();
    let mut summaries = Vec::new();
    for strategy in strategies {
        let cfg = CascadeConfig {
            aggregation: *strategy,
            ..config.clone()
        };
        let rows = suite
            .iter()
            .map(|s| evaluate_scene(s, &cfg, threshold))
            .collect::<Result<Vec<_>>>()?;
        summaries.push(StrategySummary {
            strategy: strategy.label(),
            preservation: Ratio::pooled(rows.iter().map(|r| &r.preservation)),
            preservation_aggregated: Ratio::pooled(rows.iter().map(|r| &r.preservation_aggregated)),
            depth_accuracy: Ratio::pooled(rows.iter().map(|r| &r.depth_accuracy)),
        });
        scenes.extend(rows);
    }
    Ok(MetricsReport {
        version: REPORT_VERSION,
        measured_stage: "finest".into(),
        depth_threshold: threshold,
        config: config.clone(),
        summaries,
        scenes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::Reducer;
    use crate::pipeline::CascadeConfig;
    use ndarray::Array3;
    use proptest::prelude::*;

    /// 1 x `n` grid, `m` hypotheses at 100, 101, ... with unit interval.
    fn hyps(n: usize, m: usize) -> DepthHypotheses {
        DepthHypotheses {
            values: Array3::from_shape_fn((1, n, m), |(_, _, j)| 100.0 + j as f64),
            interval: 1.0,
        }
    }

    /// Pairwise volume peaking at `peaks[x]` for every pixel `x`.
    fn peaked(peaks: &[usize], m: usize, source_id: usize) -> PairwiseCostVolume {
        let values = Array3::from_shape_fn((1, peaks.len(), m), |(_, x, j)| if j == peaks[x] { 1.0 } else { 0.0 });
        PairwiseCostVolume {
            volume: CostVolume::new(values, Array3::from_elem((1, peaks.len(), m), true)).unwrap(),
            source_id,
        }
    }

    fn estimate(depth: &[f64]) -> DepthEstimate {
        let n = depth.len();
        DepthEstimate {
            depth: Array2::from_shape_vec((1, n), depth.to_vec()).unwrap(),
            confidence: Array2::ones((1, n)),
            valid: Array2::from_elem((1, n), true),
        }
    }

    fn row(v: &[f64]) -> Array2<f64> {
        Array2::from_shape_vec((1, v.len()), v.to_vec()).unwrap()
    }

    #[test]
    fn perfect_prediction_preserves_everything() {
        let gt = row(&[100.0, 102.0, 104.0]);
        let p = [peaked(&[0, 2, 4], 6, 1)];
        let r = preservation_ratio(&p, &estimate(&[100.0, 102.0, 104.0]), gt.view(), &hyps(3, 6)).unwrap();
        assert_eq!((r.value, r.hits, r.counted), (Some(1.0), 3, 3));
    }

    #[test]
    fn four_pixel_case_gives_one_half() {
        // Pixels 0 and 1 are informative (source 2 hits pixel 1), 2 and 3 are not.
        let gt = row(&[101.0, 103.0, 102.0, 104.0]);
        let p = [peaked(&[1, 0, 0, 0], 6, 1), peaked(&[5, 3, 5, 1], 6, 2)];
        let pred = estimate(&[101.4, 105.0, 102.0, 104.0]);
        let r = preservation_ratio(&p, &pred, gt.view(), &hyps(4, 6)).unwrap();
        assert_eq!(r.counted, 2);
        assert_eq!(r.hits, 1);
        assert_eq!(r.value, Some(0.5));

        // Independent enumeration of the definition.
        let h = hyps(4, 6);
        let mut counted = 0;
        let mut hits = 0;
        for x in 0..4 {
            let g = gt[[0, x]];
            let bin = (0..6)
                .min_by(|&a, &b| (h.values[[0, x, a]] - g).abs().total_cmp(&(h.values[[0, x, b]] - g).abs()))
                .unwrap();
            if p.iter().any(|v| v.volume.values[[0, x, bin]] == 1.0) {
                counted += 1;
                hits += ((pred.depth[[0, x]] - h.values[[0, x, bin]]).abs() <= 0.5) as usize;
            }
        }
        assert_eq!((hits, counted), (r.hits, r.counted));
    }

    #[test]
    fn no_informative_pixel_is_undefined() {
        let gt = row(&[101.0, 103.0]);
        let p = [peaked(&[4, 4], 6, 1)];
        let r = preservation_ratio(&p, &estimate(&[101.0, 103.0]), gt.view(), &hyps(2, 6)).unwrap();
        assert!(!r.is_defined());
        assert_eq!(r.counted, 0);
    }

    #[test]
    fn gt_outside_the_span_is_not_counted() {
        let gt = row(&[90.0, 101.0]);
        let p = [peaked(&[0, 1], 6, 1)];
        let r = preservation_ratio(&p, &estimate(&[100.0, 101.0]), gt.view(), &hyps(2, 6)).unwrap();
        assert_eq!(r.counted, 1);
    }

    #[test]
    fn aggregated_ratio_checks_the_volume_peak() {
        let gt = row(&[101.0, 103.0]);
        let p = [peaked(&[1, 3], 6, 1)];
        let agg = peaked(&[1, 2], 6, 0).volume;
        let r = aggregated_preservation_ratio(&p, &agg, gt.view(), &hyps(2, 6)).unwrap();
        assert_eq!((r.hits, r.counted), (1, 2));
    }

    #[test]
    fn depth_accuracy_cases() {
        let gt = Array2::from_shape_fn((4, 6), |(y, x)| 500.0 + (y * 6 + x) as f64);
        let mut pred = DepthEstimate {
            depth: gt.clone(),
            confidence: Array2::ones((4, 6)),
            valid: Array2::from_elem((4, 6), true),
        };
        assert_eq!(depth_accuracy(&pred, gt.view(), 1.0).unwrap().value, Some(1.0));
        for ((y, _), d) in pred.depth.indexed_iter_mut() {
            if y % 2 == 1 {
                *d += 2.0;
            }
        }
        let r = depth_accuracy(&pred, gt.view(), 1.0).unwrap();
        assert_eq!((r.hits, r.counted, r.value), (12, 24, Some(0.5)));
        let none = Array2::<f64>::zeros((4, 6));
        assert!(!depth_accuracy(&pred, none.view(), 1.0).unwrap().is_defined());
        pred.valid.fill(false);
        assert_eq!(depth_accuracy(&pred, gt.view(), 1.0).unwrap().value, Some(0.0));
        assert!(depth_accuracy(&pred, gt.slice(ndarray::s![..2, ..]), 1.0).is_err());
    }

    fn lattice(n: usize) -> Vec<Point3<f64>> {
        (0..n * n).map(|i| Point3::new((i % n) as f64, (i / n) as f64, 0.0)).collect()
    }

    #[test]
    fn identical_clouds_score_zero() {
        let c = lattice(7);
        let m = cloud_metrics(&c, &c, 2.0).unwrap();
        assert_eq!((m.accuracy, m.completeness, m.overall), (0.0, 0.0, 0.0));
    }

    #[test]
    fn far_outlier_costs_cap_over_n_plus_one() {
        let gt = lattice(6);
        let mut pred = gt.clone();
        pred.push(Point3::new(2.0, 2.0, 50.0));
        let cap = 3.0;
        let m = cloud_metrics(&pred, &gt, cap).unwrap();
        assert!((m.accuracy - cap / (gt.len() + 1) as f64).abs() < 1e-12);
        assert_eq!(m.completeness, 0.0);
        assert!((m.overall - 0.5 * m.accuracy).abs() < 1e-12);
    }

    #[test]
    fn swapping_roles_swaps_accuracy_and_completeness() {
        let a = lattice(5);
        let b: Vec<_> = lattice(4).iter().map(|p| Point3::new(p.x * 1.3 + 0.2, p.y * 0.9, 0.4)).collect();
        let ab = cloud_metrics(&a, &b, 1.0).unwrap();
        let ba = cloud_metrics(&b, &a, 1.0).unwrap();
        assert!((ab.accuracy - ba.completeness).abs() < 1e-12);
        assert!((ab.completeness - ba.accuracy).abs() < 1e-12);
    }

    #[test]
    fn empty_clouds_and_bad_caps_are_rejected() {
        let a = lattice(2);
        assert!(cloud_metrics(&[], &a, 1.0).is_err());
        assert!(cloud_metrics(&a, &[], 1.0).is_err());
        assert!(cloud_metrics(&a, &a, 0.0).is_err());
    }

    fn sample_report() -> MetricsReport {
        let scene = SceneResult {
            scene: "a".into(),
            strategy: "late_preserved/best_peak".into(),
            preservation: Ratio::new(3, 4),
            preservation_aggregated: Ratio::new(0, 0),
            depth_accuracy: Ratio::new(7, 9),
            mean_abs_error: Some(0.125),
            cloud: Some(CloudMetrics {
                accuracy: 0.25,
                completeness: 0.5,
                overall: 0.375,
            }),
            timings: Some(Timings {
                stages: vec![0.5, 0.25, 0.125],
                total: 0.875,
            }),
        };
        MetricsReport {
            version: REPORT_VERSION,
            measured_stage: "finest".into(),
            depth_threshold: 1.0,
            config: CascadeConfig::default(),
            summaries: vec![StrategySummary {
                strategy: scene.strategy.clone(),
                preservation: scene.preservation,
                preservation_aggregated: scene.preservation_aggregated,
                depth_accuracy: scene.depth_accuracy,
            }],
            scenes: vec![scene],
        }
    }

    #[test]
    fn report_round_trips_through_toml() {
        let r = sample_report();
        let text = r.to_toml().unwrap();
        assert_eq!(MetricsReport::from_toml(&text).unwrap(), r);
        let bumped = text.replacen("version = 1", "version = 9", 1);
        assert!(MetricsReport::from_toml(&bumped).is_err());
    }

    #[test]
    fn report_echoes_the_config() {
        let text = sample_report().to_toml().unwrap();
        let value: toml::Table = toml::from_str(&text).unwrap();
        let echoed: CascadeConfig = value["config"].clone().try_into().unwrap();
        assert_eq!(echoed, CascadeConfig::default());
        for key in ["stages", "aggregation", "depth_min", "cost_scale", "train_views"] {
            assert!(value["config"].get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn csv_has_one_row_per_scene() {
        let csv = sample_report().to_csv().unwrap();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[1].starts_with("a,late_preserved/best_peak,0.75,4,,"));
    }

    #[test]
    fn surface_cloud_lies_on_the_plane() {
        use crate::geometry::{CameraIntrinsics, CameraPose};
        use crate::scene::{Primitive, Shape, Texture};
        let scene = SceneDefinition::new(
            0,
            vec![Primitive {
                shape: Shape::FrontoPlane {
                    depth: 200.0,
                    center: [0.0, 0.0],
                    half_extent: [1e3, 1e3],
                },
                texture: Texture::noise(0, 1.0),
            }],
        )
        .unwrap();
        let cam = Camera::new(CameraIntrinsics::new(50.0, 50.0, 7.5, 5.5).unwrap(), CameraPose::identity(), 16, 12).unwrap();
        let pts = gt_surface_cloud(&scene, &[cam], 2).unwrap();
        assert_eq!(pts.len(), 16 * 12 * 4);
        assert!(pts.iter().all(|p| (p.z - 200.0).abs() < 1e-9));
    }

    #[test]
    fn strategy_labels_match_summaries() {
        assert_eq!(
            AggregationStrategy::LatePreserved { reducer: Reducer::BestPeak }.label(),
            "late_preserved/best_peak"
        );
    }

    proptest! {
        #[test]
        fn preservation_is_a_fraction_and_monotone(
            peaks in proptest::collection::vec(0usize..6, 8),
            gts in proptest::collection::vec(0usize..6, 8),
            wrong in proptest::collection::vec(any::<bool>(), 8),
            fix in 0usize..8,
        ) {
            let h = hyps(8, 6);
            let gt = Array2::from_shape_fn((1, 8), |(_, x)| 100.0 + gts[x] as f64);
            let p = [peaked(&peaks, 6, 1)];
            let depths: Vec<f64> = (0..8).map(|x| 100.0 + gts[x] as f64 + if wrong[x] { 2.0 } else { 0.0 }).collect();
            let mut pred = estimate(&depths);
            let before = preservation_ratio(&p, &pred, gt.view(), &h).unwrap();
            if let Some(v) = before.value {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            pred.depth[[0, fix]] = gt[[0, fix]];
            let after = preservation_ratio(&p, &pred, gt.view(), &h).unwrap();
            prop_assert_eq!(after.counted, before.counted);
            prop_assert!(after.hits >= before.hits);
        }

        #[test]
        fn cloud_against_itself_is_zero(xs in proptest::collection::vec((-50.0f64..50.0, -50.0f64..50.0, -50.0f64..50.0), 1..40)) {
            let c: Vec<_> = xs.iter().map(|&(x, y, z)| Point3::new(x, y, z)).collect();
            let m = cloud_metrics(&c, &c, 1.5).unwrap();
            prop_assert_eq!((m.accuracy, m.completeness, m.overall), (0.0, 0.0, 0.0));
        }

        #[test]
        fn grid_search_matches_brute_force(
            a in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0), 1..30),
            b in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0), 1..30),
            cap in 0.2f64..4.0,
        ) {
            let a: Vec<_> = a.iter().map(|&(x, y, z)| Point3::new(x, y, z)).collect();
            let b: Vec<_> = b.iter().map(|&(x, y, z)| Point3::new(x, y, z)).collect();
            let brute = |from: &[Point3<f64>], to: &[Point3<f64>]| {
                from.iter()
                    .map(|p| to.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min).min(cap))
                    .sum::<f64>() / from.len() as f64
            };
            let m = cloud_metrics(&a, &b, cap).unwrap();
            prop_assert!((m.accuracy - brute(&a, &b)).abs() < 1e-9);
            prop_assert!((m.completeness - brute(&b, &a)).abs() < 1e-9);
        }
    }

    #[test]
    fn pooled_ratio_adds_tallies() {
        let r = Ratio::pooled([Ratio::new(1, 2), Ratio::new(0, 0), Ratio::new(3, 6)].iter());
        assert_eq!((r.hits, r.counted, r.value), (4, 8, Some(0.5)));
    }
}
