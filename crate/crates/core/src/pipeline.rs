//! The coarse-to-fine cascade.
//!
//! Each stage extracts features at its resolution, builds one matching volume
//! per source view, aggregates them according to the configured strategy,
//! regularises the result, and regresses a depth map whose upsampled copy
//! centres the next stage's hypotheses.

use std::time::Instant;

use ndarray::{s, Array2, Array3, ArrayView2, Axis, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{self, AggregationStrategy};
use crate::cost::{
    self, assemble_view_preserved, extract_features, masked_box_filter, pairwise_cost, pre_regularize,
    sample_hypotheses, CostVolume, DepthHypotheses, HypothesisSeed, PairwiseCostVolume,
};
use crate::error::{Error, Result};
use crate::geometry::Camera;

/// Lowest hypothesis of the coarsest stage unless configured otherwise.
pub const DEFAULT_DEPTH_MIN: f64 = 425.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regression {
    SoftArgmax,
    Wta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    /// Integer downsampling factor of the stage grid (4, 2, 1 for scales 1/4, 1/2, 1).
    pub downsample: usize,
    pub hypotheses: usize,
    pub interval: f64,
    pub regression: Regression,
}

impl StageConfig {
    pub fn scale(&self) -> f64 {
        1.0 / self.downsample as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CascadeConfig {
    pub stages: Vec<StageConfig>,
    pub aggregation: AggregationStrategy,
    pub shuffle_seed: Option<u64>,
    /// View count the volume slots are sized for (`train_views - 1` sources).
    pub train_views: usize,
    /// Lowest depth hypothesis of the first stage.
    pub depth_min: f64,
    /// Gain applied to regularised costs before the depth softmax.
    pub cost_scale: f64,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        let stage = |downsample, hypotheses, interval, regression| StageConfig {
            downsample,
            hypotheses,
            interval,
            regression,
        };
        CascadeConfig {
            stages: vec![
                stage(4, 48, 4.0, Regression::SoftArgmax),
                stage(2, 32, 1.0, Regression::SoftArgmax),
                stage(1, 8, 0.5, Regression::SoftArgmax),
            ],
            aggregation: AggregationStrategy::default(),
            shuffle_seed: None,
            train_views: 5,
            depth_min: DEFAULT_DEPTH_MIN,
            cost_scale: 60.0,
        }
    }
}

impl CascadeConfig {
    pub fn finest_interval(&self) -> f64 {
        self.stages.last().map_or(f64::NAN, |s| s.interval)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::config("cascade needs at least one stage"));
        }
        for (i, st) in self.stages.iter().enumerate() {
            if st.downsample == 0 {
                return Err(Error::config(format!("stage {i}: downsample factor must be >= 1")));
            }
            if st.hypotheses < 2 {
                return Err(Error::config(format!("stage {i}: need at least 2 hypotheses")));
            }
            if !(st.interval > 0.0) || !st.interval.is_finite() {
                return Err(Error::config(format!("stage {i}: interval must be positive")));
            }
        }
        if self.train_views < 2 {
            return Err(Error::config("train_views must be at least 2"));
        }
        if !(self.depth_min > 0.0) || !self.depth_min.is_finite() {
            return Err(Error::config("depth_min must be positive"));
        }
        if !(self.cost_scale > 0.0) || !self.cost_scale.is_finite() {
            return Err(Error::config("cost_scale must be positive"));
        }
        Ok(())
    }
}

/// Per-pixel distribution over the depth hypotheses, `H x W x D`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVolume {
    pub probs: Array3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthEstimate {
    pub depth: Array2<f64>,
    pub confidence: Array2<f64>,
    pub valid: Array2<bool>,
}

impl DepthEstimate {
    pub fn dim(&self) -> (usize, usize) {
        self.depth.dim()
    }
}

/// Two passes of the masked 3x3x3 box filter.
pub fn regularize_cost(volume: &CostVolume) -> CostVolume {
    masked_box_filter(&masked_box_filter(volume))
}

/// Softmax along depth over the valid cells, then regression.
///
/// Pixels without a valid cell are marked invalid; their probabilities are
/// uniform and their depth is the mean hypothesis. The returned confidence is
/// zero everywhere; see [`confidence_map`].
pub fn softmax_depth(
    volume: &CostVolume,
    hyps: &DepthHypotheses,
    mode: Regression,
) -> Result<(DepthEstimate, ProbabilityVolume)> {
    let (h, w, d) = volume.dim();
    if hyps.values.dim() != (h, w, d) {
        return Err(Error::arg("cost volume and hypotheses differ in shape"));
    }
    let mut probs = Array3::<f64>::zeros((h, w, d));
    let mut depth = Array2::<f64>::zeros((h, w));
    let mut valid = Array2::from_elem((h, w), false);
    Zip::from(probs.lanes_mut(Axis(2)))
        .and(&mut depth)
        .and(&mut valid)
        .and(volume.values.lanes(Axis(2)))
        .and(volume.valid.lanes(Axis(2)))
        .and(hyps.values.lanes(Axis(2)))
        .par_for_each(|mut p, dep, ok, vals, mask, hy| {
            let vals = vals.to_vec();
            let mask = mask.to_vec();
            match aggregation::lane_softmax(&vals, &mask) {
                Some(sm) => {
                    p.iter_mut().zip(&sm).for_each(|(dst, &v)| *dst = v);
                    *dep = match mode {
                        Regression::SoftArgmax => sm.iter().zip(hy.iter()).map(|(p, d)| p * d).sum(),
                        Regression::Wta => {
                            let mut best = 0;
                            for j in 1..d {
                                if sm[j] > sm[best] {
                                    best = j;
                                }
                            }
                            hy[best]
                        }
                    };
                    *ok = true;
                }
                None => {
                    p.fill(1.0 / d as f64);
                    *dep = hy.mean().unwrap_or(0.0);
                }
            }
        });
    Ok((
        DepthEstimate {
            depth,
            confidence: Array2::zeros((h, w)),
            valid,
        },
        ProbabilityVolume { probs },
    ))
}

/// Bins `[start, start + 4)` summed for the confidence at argmax `a`:
/// nominally `a-1 ..= a+2`, shifted to stay inside the volume.
pub fn confidence_window(argmax: usize, depth_bins: usize) -> std::ops::Range<usize> {
    let len = 4.min(depth_bins);
    let start = argmax.saturating_sub(1).min(depth_bins - len);
    start..start + len
}

/// Probability mass of the four bins around each pixel's most likely hypothesis.
pub fn confidence_map(probs: &ProbabilityVolume) -> Array2<f64> {
    let (h, w, d) = probs.probs.dim();
    let mut out = Array2::zeros((h, w));
    Zip::from(&mut out)
        .and(probs.probs.lanes(Axis(2)))
        .par_for_each(|c, lane| {
            let mut best = 0;
            for j in 1..d {
                if lane[j] > lane[best] {
                    best = j;
                }
            }
            *c = lane.slice(s![confidence_window(best, d)]).sum().clamp(0.0, 1.0);
        });
    out
}

#[derive(Debug, Clone)]
pub struct StageOutput {
    pub stage: usize,
    /// Reference camera at this stage's resolution.
    pub camera: Camera,
    pub hypotheses: DepthHypotheses,
    /// Raw per-source volumes in input order, before any padding.
    pub pairwise: Vec<PairwiseCostVolume>,
    /// Aggregated (early) or reduced (late) volume, before regularisation.
    pub aggregated: CostVolume,
    pub probabilities: ProbabilityVolume,
    pub estimate: DepthEstimate,
    /// `H x W x D x V` of the view-preserved volume on the late path.
    pub preserved_shape: Option<(usize, usize, usize, usize)>,
    /// Source id of every volume slot after padding and shuffling.
    pub channel_order: Vec<usize>,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct CascadeOutput {
    pub stages: Vec<StageOutput>,
}

impl CascadeOutput {
    pub fn final_stage(&self) -> &StageOutput {
        self.stages.last().expect("cascade has at least one stage")
    }

    pub fn final_estimate(&self) -> &DepthEstimate {
        &self.final_stage().estimate
    }
}

/// How the source volumes fill the `train_views - 1` slots.
#[derive(Debug, Clone, Copy)]
pub(crate) enum SlotFill<'a> {
    /// Exactly one volume per slot.
    Exact,
    /// Fewer sources than slots: append copies of the highest-scoring volume.
    Pad { scores: &'a [f64] },
}

/// Runs the full cascade. `images[0]` is the reference view; the number of
/// sources must equal `config.train_views - 1` (see [`crate::flex`] otherwise).
pub fn run_cascade(images: &[ArrayView2<f32>], cameras: &[Camera], config: &CascadeConfig) -> Result<CascadeOutput> {
    run_cascade_with(images, cameras, config, SlotFill::Exact)
}

pub(crate) fn run_cascade_with(
    images: &[ArrayView2<f32>],
    cameras: &[Camera],
    config: &CascadeConfig,
    fill: SlotFill<'_>,
) -> Result<CascadeOutput> {
    config.validate()?;
    if images.len() < 2 {
        return Err(Error::arg("the cascade needs a reference and at least one source image"));
    }
    if images.len() != cameras.len() {
        return Err(Error::arg(format!("{} images but {} cameras", images.len(), cameras.len())));
    }
    for (i, (img, cam)) in images.iter().zip(cameras).enumerate() {
        if img.dim() != (cam.height, cam.width) {
            return Err(Error::arg(format!("image {i} does not match its camera resolution")));
        }
    }
    let sources = images.len() - 1;
    let slots = config.train_views - 1;
    match fill {
        SlotFill::Exact if sources != slots => {
            return Err(Error::arg(format!(
                "{sources} source views for {slots} volume slots; use the flexible-view path"
            )))
        }
        SlotFill::Pad { scores } if sources >= slots || scores.len() != sources => {
            return Err(Error::arg("padding needs fewer sources than slots and one score per source"))
        }
        _ => {}
    }

    let mut stages = Vec::with_capacity(config.stages.len());
    let mut previous: Option<Array2<f64>> = None;
    for (index, st) in config.stages.iter().enumerate() {
        let started = Instant::now();
        let cams = cameras
            .iter()
            .map(|c| c.downsampled(st.downsample))
            .collect::<Result<Vec<_>>>()?;
        let features = images
            .par_iter()
            .map(|img| extract_features(*img, st.downsample, index))
            .collect::<Result<Vec<_>>>()?;
        let shape = (cams[0].height, cams[0].width);
        let seed = match &previous {
            None => HypothesisSeed::Range { d_min: config.depth_min },
            Some(prev) => HypothesisSeed::Previous(prev.view()),
        };
        let hyps = sample_hypotheses(seed, shape, st.hypotheses, st.interval)?;
        let pairwise = (1..images.len())
            .map(|i| pairwise_cost(&features[0], &features[i], &cams[0], &cams[i], &hyps, i))
            .collect::<Result<Vec<_>>>()?;

        let mut preserved_shape = None;
        let scale = config.cost_scale as f32;
        let (aggregated, regularized, channel_order) = match config.aggregation {
            AggregationStrategy::EarlyVariance | AggregationStrategy::EarlyWeighted => {
                let slotted = fill_slots(pairwise.clone(), fill, config.train_views)?;
                let order = slotted.iter().map(|v| v.source_id).collect();
                let vol = if config.aggregation == AggregationStrategy::EarlyVariance {
                    aggregation::early_variance(&slotted)?.mapv(|v| -v)
                } else {
                    let weights = aggregation::compute_view_weights(&slotted)?;
                    aggregation::early_weighted(&slotted, &weights)?
                };
                let reg = regularize_cost(&vol);
                (vol, reg, order)
            }
            AggregationStrategy::LatePreserved { reducer } => {
                let pre: Vec<_> = pairwise.par_iter().map(pre_regularize).collect();
                let slotted = fill_slots(pre, fill, config.train_views)?;
                let mut cvp = assemble_view_preserved(&slotted)?;
                if let Some(seed) = config.shuffle_seed {
                    cvp = cost::shuffle_views(&cvp, seed.wrapping_add(index as u64));
                }
                preserved_shape = Some(cvp.dim());
                let order = cvp.channel_order.clone();
                let reduced = aggregation::reduce_views_with_gain(&cvp, reducer, scale);
                let reg = regularize_cost(&reduced);
                (reduced, reg, order)
            }
        };

        let regularized = regularized.mapv(|v| v * scale);
        let (mut estimate, probabilities) = softmax_depth(&regularized, &hyps, st.regression)?;
        estimate.confidence = confidence_map(&probabilities);
        Zip::from(&mut estimate.confidence)
            .and(&estimate.valid)
            .for_each(|c, &ok| {
                if !ok {
                    *c = 0.0
                }
            });
        previous = Some(estimate.depth.clone());
        stages.push(StageOutput {
            stage: index,
            camera: cams[0].clone(),
            hypotheses: hyps,
            pairwise,
            aggregated,
            probabilities,
            estimate,
            preserved_shape,
            channel_order,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok(CascadeOutput { stages })
}

fn fill_slots(volumes: Vec<PairwiseCostVolume>, fill: SlotFill<'_>, train_views: usize) -> Result<Vec<PairwiseCostVolume>> {
    match fill {
        SlotFill::Exact => Ok(volumes),
        SlotFill::Pad { scores } => crate::flex::pad_fewer_views(&volumes, scores, train_views),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn hyps_from(values: &[f64]) -> DepthHypotheses {
        DepthHypotheses {
            values: Array3::from_shape_fn((1, 1, values.len()), |(_, _, j)| values[j]),
            interval: values[1] - values[0],
        }
    }

    fn lane_volume(values: &[f32]) -> CostVolume {
        CostVolume {
            values: Array3::from_shape_fn((1, 1, values.len()), |(_, _, j)| values[j]),
            valid: Array3::from_elem((1, 1, values.len()), true),
        }
    }

    #[test]
    fn default_cascade_matches_published_schedule() {
        let cfg = CascadeConfig::default();
        let got: Vec<_> = cfg.stages.iter().map(|s| (s.scale(), s.hypotheses, s.interval)).collect();
        assert_eq!(got, vec![(0.25, 48, 4.0), (0.5, 32, 1.0), (1.0, 8, 0.5)]);
        assert_eq!(cfg.train_views, 5);
        cfg.validate().unwrap();
    }

    #[test]
    fn regularize_constant_volume_is_unchanged() {
        let v = CostVolume {
            values: Array3::from_elem((4, 5, 6), 0.7),
            valid: Array3::from_elem((4, 5, 6), true),
        };
        let r = regularize_cost(&v);
        for x in r.values.iter() {
            assert_abs_diff_eq!(*x, 0.7, epsilon = 1e-6);
        }
    }

    #[test]
    fn regularize_impulse_matches_sequential_oracle() {
        let mut v = CostVolume::zeros((7, 7, 7));
        v.valid.fill(true);
        v.values[[3, 3, 3]] = 1.0;
        let once = masked_box_filter(&v);
        let twice = regularize_cost(&v);
        assert_eq!(twice, masked_box_filter(&once));
        assert_ne!(twice, once);
        // two interior box passes: separable triangle [1,2,3,2,1]/9 per axis
        let tri = [1.0, 2.0, 3.0, 2.0, 1.0];
        for (y, ty) in tri.iter().enumerate() {
            for (x, tx) in tri.iter().enumerate() {
                for (z, tz) in tri.iter().enumerate() {
                    let expect = ty * tx * tz / 729.0;
                    assert_abs_diff_eq!(twice.values[[y + 1, x + 1, z + 1]] as f64, expect, epsilon = 1e-7);
                }
            }
        }
    }

    #[test]
    fn uniform_cost_regresses_to_middle() {
        let (est, probs) = softmax_depth(&lane_volume(&[0.3; 3]), &hyps_from(&[2.0, 4.0, 6.0]), Regression::SoftArgmax).unwrap();
        assert_abs_diff_eq!(est.depth[[0, 0]], 4.0, epsilon = 1e-12);
        assert!(probs.probs.iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn hand_computed_softmax() {
        let vol = lane_volume(&[1f32.ln(), 3f32.ln()]);
        let (est, probs) = softmax_depth(&vol, &hyps_from(&[10.0, 20.0]), Regression::SoftArgmax).unwrap();
        assert_abs_diff_eq!(probs.probs[[0, 0, 0]], 0.25, epsilon = 1e-7);
        assert_abs_diff_eq!(probs.probs[[0, 0, 1]], 0.75, epsilon = 1e-7);
        assert_abs_diff_eq!(est.depth[[0, 0]], 17.5, epsilon = 1e-5);
    }

    #[test]
    fn dominant_peak_saturates_both_modes() {
        let hyps = hyps_from(&[5.0, 5.5, 6.0, 6.5, 7.0]);
        let mut v = vec![0.0f32; 5];
        v[3] = 25.0;
        let vol = lane_volume(&v);
        let (wta, _) = softmax_depth(&vol, &hyps, Regression::Wta).unwrap();
        let (soft, _) = softmax_depth(&vol, &hyps, Regression::SoftArgmax).unwrap();
        assert_eq!(wta.depth[[0, 0]], 6.5);
        assert!((soft.depth[[0, 0]] - 6.5).abs() <= 0.5 / 100.0);
    }

    #[test]
    fn invalid_lane_is_marked_invalid() {
        let mut vol = lane_volume(&[1.0, 2.0]);
        vol.valid.fill(false);
        let (est, probs) = softmax_depth(&vol, &hyps_from(&[10.0, 20.0]), Regression::Wta).unwrap();
        assert!(!est.valid[[0, 0]]);
        assert_eq!(est.depth[[0, 0]], 15.0);
        assert_abs_diff_eq!(probs.probs.sum(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn invalid_cells_get_zero_probability() {
        let mut vol = lane_volume(&[5.0, 0.0, 0.0]);
        vol.valid[[0, 0, 0]] = false;
        let (est, probs) = softmax_depth(&vol, &hyps_from(&[1.0, 2.0, 3.0]), Regression::SoftArgmax).unwrap();
        assert_eq!(probs.probs[[0, 0, 0]], 0.0);
        assert_abs_diff_eq!(est.depth[[0, 0]], 2.5, epsilon = 1e-12);
    }

    #[test]
    fn confidence_examples() {
        let mut one_hot = ProbabilityVolume { probs: Array3::zeros((1, 1, 8)) };
        one_hot.probs[[0, 0, 6]] = 1.0;
        assert_eq!(confidence_map(&one_hot)[[0, 0]], 1.0);
        let uniform = ProbabilityVolume { probs: Array3::from_elem((1, 1, 8), 0.125) };
        assert_abs_diff_eq!(confidence_map(&uniform)[[0, 0]], 0.5, epsilon = 1e-12);
        assert_eq!(confidence_window(0, 8), 0..4);
        assert_eq!(confidence_window(7, 8), 4..8);
        assert_eq!(confidence_window(3, 8), 2..6);
        assert_eq!(confidence_window(1, 3), 0..3);
    }

    #[test]
    fn confidence_matches_window_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = 9;
        let mut probs = Array3::from_shape_fn((6, 5, d), |_| rng.random::<f64>());
        for mut lane in probs.lanes_mut(Axis(2)) {
            let s = lane.sum();
            lane.mapv_inplace(|v| v / s);
        }
        let pv = ProbabilityVolume { probs: probs.clone() };
        let got = confidence_map(&pv);
        for y in 0..6 {
            for x in 0..5 {
                let lane: Vec<f64> = (0..d).map(|j| probs[[y, x, j]]).collect();
                let a = (0..d).fold(0, |b, j| if lane[j] > lane[b] { j } else { b });
                // all windows of 4 containing a, preferring the one starting at a-1
                let mut start = a as isize - 1;
                start = start.clamp(0, d as isize - 4);
                let expect: f64 = lane[start as usize..start as usize + 4].iter().sum();
                assert_abs_diff_eq!(got[[y, x]], expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn probabilities_are_normalised() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let valid = Array3::from_shape_fn((5, 4, 7), |_| rng.random::<f64>() > 0.3);
        let values = Array3::from_shape_fn((5, 4, 7), |_| rng.random_range(-30.0f32..30.0));
        let vol = CostVolume { values, valid };
        let hyps = DepthHypotheses {
            values: Array3::from_shape_fn((5, 4, 7), |(_, _, j)| 10.0 + j as f64),
            interval: 1.0,
        };
        let (_, probs) = softmax_depth(&vol, &hyps, Regression::SoftArgmax).unwrap();
        for lane in probs.probs.lanes(Axis(2)) {
            assert!((lane.sum() - 1.0).abs() <= 1e-5);
            assert!(lane.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn config_validation_rejects_degenerate_intervals() {
        let mut cfg = CascadeConfig::default();
        cfg.stages[1].interval = 0.0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = CascadeConfig::default();
        cfg.cost_scale = -1.0;
        assert!(cfg.validate().is_err());
    }
}
