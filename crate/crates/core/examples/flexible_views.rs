//! Estimates depth with fewer, equal and more views than the cascade's slot count.
//!
//! ```text
//! cargo run --release --example flexible_views
//! ```

use late_mvs::flex::{frustum_anchors, run_flexible, UsefulnessParams};
use late_mvs::metrics::depth_accuracy;
use late_mvs::pipeline::CascadeConfig;
use late_mvs::scene::{clean_suite, RigLayout, SUITE_DEPTH};

fn main() -> late_mvs::Result<()> {
    let config = CascadeConfig::default();
    let mut scene = clean_suite()?.remove(0);
    scene.rig.width = 160;
    scene.rig.height = 128;
    for count in [3, 5, 8] {
        if let RigLayout::Ring { count: c, .. } = &mut scene.rig.layout {
            *c = count;
        }
        let views = scene.render()?;
        let images: Vec<_> = views.iter().map(|v| v.image.view()).collect();
        let cams: Vec<_> = views.iter().map(|v| v.camera).collect();
        let anchors = frustum_anchors(&cams[0], SUITE_DEPTH, 8);
        let out = run_flexible(&images, &cams, &config, &anchors, &UsefulnessParams::default())?;
        let acc = depth_accuracy(&out.fused, views[0].gt_depth.view(), 2.0 * config.finest_interval())?;
        let scores: Vec<_> = out.scores.iter().map(|s| format!("{s:.2}")).collect();
        println!(
            "{count} views: {:?}, {} run(s), usefulness [{}], accuracy {:.1}%",
            out.mode,
            out.runs.len(),
            scores.join(", "),
            100.0 * acc.value.unwrap_or(0.0)
        );
    }
    Ok(())
}
