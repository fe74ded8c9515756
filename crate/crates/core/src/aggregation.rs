//! Ways of combining per-source matching volumes.
//!
//! Early strategies collapse the raw pairwise volumes into one volume before
//! any regularisation: a per-cell variance, or a weighted sum whose weights
//! come from how peaked each view's depth distribution is. The late strategy
//! keeps the views apart (see [`crate::cost::ViewPreservedCost`]) and reduces
//! the view axis per pixel afterwards.
//!
//! All sums over the view axis are taken in a canonical (sorted) order so the
//! results do not depend on the order in which views are supplied.

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::cost::{CostVolume, PairwiseCostVolume, ViewPreservedCost};
use crate::error::{Error, Result};

/// Per-pixel reduction of the view axis for the late path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reducer {
    Mean,
    BestPeak,
    EntropyWeighted,
}

impl Reducer {
    pub const ALL: [Reducer; 3] = [Reducer::Mean, Reducer::BestPeak, Reducer::EntropyWeighted];

    pub fn name(&self) -> &'static str {
        match self {
            Reducer::Mean => "mean",
            Reducer::BestPeak => "best_peak",
            Reducer::EntropyWeighted => "entropy_weighted",
        }
    }
}

impl std::str::FromStr for Reducer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Reducer::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::arg(format!("unknown reducer '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AggregationStrategy {
    EarlyVariance,
    EarlyWeighted,
    LatePreserved { reducer: Reducer },
}

impl Default for AggregationStrategy {
    fn default() -> Self {
        AggregationStrategy::LatePreserved {
            reducer: Reducer::BestPeak,
        }
    }
}

impl AggregationStrategy {
    pub fn label(&self) -> String {
        match self {
            AggregationStrategy::EarlyVariance => "early_variance".into(),
            AggregationStrategy::EarlyWeighted => "early_weighted".into(),
            AggregationStrategy::LatePreserved { reducer } => format!("late_preserved/{}", reducer.name()),
        }
    }

    pub fn is_late(&self) -> bool {
        matches!(self, AggregationStrategy::LatePreserved { .. })
    }

    /// Parses `early_variance`, `early_weighted` or `late_preserved` (with an
    /// optional `/reducer` suffix; the reducer defaults to `best_peak`).
    pub fn parse(kind: &str, reducer: Option<Reducer>) -> Result<Self> {
        let (kind, suffix) = match kind.split_once('/') {
            Some((k, r)) => (k, Some(r.parse::<Reducer>()?)),
            None => (kind, None),
        };
        let reducer = reducer.or(suffix);
        match kind {
            "early_variance" | "early_weighted" if reducer.is_some() => {
                Err(Error::arg("a reducer only applies to late_preserved"))
            }
            "early_variance" => Ok(AggregationStrategy::EarlyVariance),
            "early_weighted" => Ok(AggregationStrategy::EarlyWeighted),
            "late_preserved" => Ok(AggregationStrategy::LatePreserved {
                reducer: reducer.unwrap_or(Reducer::BestPeak),
            }),
            other => Err(Error::arg(format!("unknown aggregation strategy '{other}'"))),
        }
    }
}

/// Per-pixel view weights, `H x W x V`, each pixel on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewWeights {
    pub weights: Array3<f64>,
    /// Pixels where no view had a valid cell and uniform weights were used.
    pub fallback: Array2<bool>,
}

fn sorted_sum(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    values.iter().sum()
}

fn check_shapes<'a>(volumes: impl IntoIterator<Item = &'a CostVolume>) -> Result<(usize, usize, usize)> {
    let mut it = volumes.into_iter();
    let first = it.next().ok_or_else(|| Error::arg("need at least one volume"))?.dim();
    if it.any(|v| v.dim() != first) {
        return Err(Error::arg("volumes differ in shape"));
    }
    Ok(first)
}

/// Softmax over the valid cells of one depth lane. Invalid cells get 0.
/// Returns `None` when the lane has no valid cell.
pub(crate) fn lane_softmax(values: &[f32], valid: &[bool]) -> Option<Vec<f64>> {
    let max = values
        .iter()
        .zip(valid)
        .filter(|(_, &ok)| ok)
        .map(|(&v, _)| v as f64)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return None;
    }
    let mut p: Vec<f64> = values
        .iter()
        .zip(valid)
        .map(|(&v, &ok)| if ok { (v as f64 - max).exp() } else { 0.0 })
        .collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= z);
    Some(p)
}

/// Shannon entropy in nats with `0 ln 0 = 0`.
pub(crate) fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

fn lane(v: &CostVolume, y: usize, x: usize) -> (Vec<f32>, Vec<bool>) {
    (
        v.values.slice(ndarray::s![y, x, ..]).to_vec(),
        v.valid.slice(ndarray::s![y, x, ..]).to_vec(),
    )
}

/// Population variance across views at every cell, over the views valid there.
pub fn early_variance(volumes: &[PairwiseCostVolume]) -> Result<CostVolume> {
    let shape = check_shapes(volumes.iter().map(|v| &v.volume))?;
    let mut out = CostVolume::zeros(shape);
    let mut buf = Vec::with_capacity(volumes.len());
    for ((y, x, z), o) in out.values.indexed_iter_mut() {
        buf.clear();
        buf.extend(
            volumes
                .iter()
                .filter(|v| v.volume.valid[[y, x, z]])
                .map(|v| v.volume.values[[y, x, z]] as f64),
        );
        if buf.is_empty() {
            continue;
        }
        let n = buf.len() as f64;
        let mean = sorted_sum(&mut buf) / n;
        let mut sq: Vec<f64> = buf.iter().map(|v| (v - mean) * (v - mean)).collect();
        *o = (sorted_sum(&mut sq) / n) as f32;
        out.valid[[y, x, z]] = true;
    }
    Ok(out)
}

/// Weight of each view ∝ the peak of its depth softmax (temperature 1).
pub fn compute_view_weights(volumes: &[PairwiseCostVolume]) -> Result<ViewWeights> {
    let (h, w, _) = check_shapes(volumes.iter().map(|v| &v.volume))?;
    if volumes.len() < 2 {
        return Err(Error::arg("view weights need at least two volumes"));
    }
    let n = volumes.len();
    let mut weights = Array3::zeros((h, w, n));
    let mut fallback = Array2::from_elem((h, w), false);
    for y in 0..h {
        for x in 0..w {
            let conf: Vec<f64> = volumes
                .iter()
                .map(|v| {
                    let (vals, ok) = lane(&v.volume, y, x);
                    lane_softmax(&vals, &ok).map_or(0.0, |p| p.into_iter().fold(0.0, f64::max))
                })
                .collect();
            let total = sorted_sum(&mut conf.clone());
            for (k, c) in conf.iter().enumerate() {
                weights[[y, x, k]] = if total > 0.0 { c / total } else { 1.0 / n as f64 };
            }
            fallback[[y, x]] = total <= 0.0;
        }
    }
    Ok(ViewWeights { weights, fallback })
}

/// `Σ_i w_i(p) V_i(p, j)`; a cell is valid if any view is valid there.
pub fn early_weighted(volumes: &[PairwiseCostVolume], weights: &ViewWeights) -> Result<CostVolume> {
    let (h, w, d) = check_shapes(volumes.iter().map(|v| &v.volume))?;
    if weights.weights.dim() != (h, w, volumes.len()) {
        return Err(Error::arg("weights do not match the volumes"));
    }
    let mut out = CostVolume::zeros((h, w, d));
    let mut terms = Vec::with_capacity(volumes.len());
    for ((y, x, z), o) in out.values.indexed_iter_mut() {
        terms.clear();
        let mut any = false;
        for (k, v) in volumes.iter().enumerate() {
            if v.volume.valid[[y, x, z]] {
                any = true;
                terms.push(weights.weights[[y, x, k]] * v.volume.values[[y, x, z]] as f64);
            }
        }
        if any {
            *o = sorted_sum(&mut terms) as f32;
            out.valid[[y, x, z]] = true;
        }
    }
    Ok(out)
}

/// Collapses the view axis of a preserved volume pixel by pixel.
///
/// * `Mean`: per-cell mean over the channels valid at that cell.
/// * `BestPeak`: the whole depth profile of the channel whose depth softmax has
///   the lowest entropy (lowest channel index on exact ties).
/// * `EntropyWeighted`: channel weights ∝ `exp(-entropy)`, renormalised per
///   cell over the valid channels.
///
/// A pixel where no channel has a valid cell yields a zero, invalid profile.
pub fn reduce_views(cvp: &ViewPreservedCost, reducer: Reducer) -> CostVolume {
    reduce_views_with_gain(cvp, reducer, 1.0)
}

/// [`reduce_views`] with entropies taken of `softmax(gain * cost)`.
pub fn reduce_views_with_gain(cvp: &ViewPreservedCost, reducer: Reducer, gain: f32) -> CostVolume {
    let (h, w, d, n) = cvp.dim();
    let mut out = CostVolume::zeros((h, w, d));
    let mut out_lanes_v = out.values.lanes_mut(Axis(2)).into_iter();
    let mut out_lanes_m = out.valid.lanes_mut(Axis(2)).into_iter();
    for y in 0..h {
        for x in 0..w {
            let mut ov = out_lanes_v.next().unwrap();
            let mut om = out_lanes_m.next().unwrap();
            let chans: Vec<(Vec<f32>, Vec<bool>)> = (0..n)
                .map(|k| {
                    (
                        cvp.values.slice(ndarray::s![y, x, .., k]).to_vec(),
                        cvp.valid.slice(ndarray::s![y, x, .., k]).to_vec(),
                    )
                })
                .collect();
            let entropies: Vec<Option<f64>> = chans
                .iter()
                .map(|(v, m)| {
                    let scaled: Vec<f32> = v.iter().map(|x| x * gain).collect();
                    lane_softmax(&scaled, m).map(|p| entropy(&p))
                })
                .collect();
            match reducer {
                Reducer::Mean => {
                    let mut buf = Vec::with_capacity(n);
                    for z in 0..d {
                        buf.clear();
                        buf.extend(chans.iter().filter(|c| c.1[z]).map(|c| c.0[z] as f64));
                        if !buf.is_empty() {
                            let cnt = buf.len() as f64;
                            ov[z] = (sorted_sum(&mut buf) / cnt) as f32;
                            om[z] = true;
                        }
                    }
                }
                Reducer::BestPeak => {
                    let mut best: Option<(usize, f64)> = None;
                    for (k, e) in entropies.iter().enumerate() {
                        if let Some(e) = *e {
                            if best.is_none_or(|(_, b)| e < b) {
                                best = Some((k, e));
                            }
                        }
                    }
                    if let Some((k, _)) = best {
                        for z in 0..d {
                            ov[z] = chans[k].0[z];
                            om[z] = chans[k].1[z];
                        }
                    }
                }
                Reducer::EntropyWeighted => {
                    let min_e = entropies.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
                    if min_e.is_infinite() {
                        continue;
                    }
                    let raw: Vec<f64> = entropies
                        .iter()
                        .map(|e| e.map_or(0.0, |e| (min_e - e).exp()))
                        .collect();
                    let mut num = Vec::with_capacity(n);
                    let mut den = Vec::with_capacity(n);
                    for z in 0..d {
                        num.clear();
                        den.clear();
                        for (k, c) in chans.iter().enumerate() {
                            if c.1[z] && raw[k] > 0.0 {
                                num.push(raw[k] * c.0[z] as f64);
                                den.push(raw[k]);
                            }
                        }
                        if !den.is_empty() {
                            ov[z] = (sorted_sum(&mut num) / sorted_sum(&mut den)) as f32;
                            om[z] = true;
                        }
                    }
                }
            }
        }
    }
    out
}
