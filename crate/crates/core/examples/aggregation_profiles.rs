//! Three matching profiles for one pixel: only the first view sees the true
//! surface. Early weighted summation follows the two occluded views; the
//! view-preserved best-peak reducer keeps the informative one.
//!
//! ```text
//! cargo run --example aggregation_profiles
//! ```

use late_mvs::aggregation::{early_variance, early_weighted, reduce_views, Reducer, ViewWeights};
use late_mvs::cost::{assemble_view_preserved, CostVolume, PairwiseCostVolume};
use ndarray::{Array2, Array3};

fn volume(values: Vec<f32>, id: usize) -> late_mvs::Result<PairwiseCostVolume> {
    let d = values.len();
    Ok(PairwiseCostVolume {
        volume: CostVolume::new(Array3::from_shape_vec((1, 1, d), values).expect("profile shape"), Array3::from_elem((1, 1, d), true))?,
        source_id: id,
    })
}

fn main() -> late_mvs::Result<()> {
    let d = 8;
    let hump = |c: f32, s: f32| (0..d).map(|j| 6.0 * (-(j as f32 - c).powi(2) / (2.0 * s * s)).exp()).collect();
    let vols = vec![
        volume((0..d).map(|j| if j == 2 { 4.0 } else { 0.0 }).collect(), 1)?,
        volume(hump(6.0, 3.0), 2)?,
        volume(hump(7.0, 3.5), 3)?,
    ];
    for v in &vols {
        let row: Vec<_> = v.volume.values.iter().map(|c| format!("{c:5.2}")).collect();
        println!("view {}: {}", v.source_id, row.join(" "));
    }
    let weights = ViewWeights {
        weights: Array3::from_shape_vec((1, 1, 3), vec![0.444, 0.296, 0.259]).expect("weight shape"),
        fallback: Array2::from_elem((1, 1), false),
    };
    let show = |name: &str, v: &CostVolume| println!("{name:<24} argmax {:?}", v.argmax(0, 0));
    show("early_variance", &early_variance(&vols)?);
    show("early_weighted", &early_weighted(&vols, &weights)?);
    let cvp = assemble_view_preserved(&vols)?;
    for r in Reducer::ALL {
        show(&format!("late_preserved/{}", r.name()), &reduce_views(&cvp, r));
    }
    Ok(())
}
