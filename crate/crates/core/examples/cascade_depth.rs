//! Runs the three-stage cascade on the slanted clean scene and reports each stage.
//!
//! ```text
//! cargo run --release --example cascade_depth -- depth.pfm [reducer]
//! ```

use late_mvs::aggregation::{AggregationStrategy, Reducer};
use late_mvs::io;
use late_mvs::pipeline::{run_cascade, CascadeConfig};
use late_mvs::scene::clean_suite;

fn main() -> late_mvs::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "depth.pfm".into());
    let suite = clean_suite()?;
    let scene = suite.iter().find(|s| s.name.contains("slanted")).unwrap_or(&suite[0]);
    let views = scene.render()?;
    let images: Vec<_> = views.iter().map(|v| v.image.view()).collect();
    let cams: Vec<_> = views.iter().map(|v| v.camera).collect();
    let reducer = match std::env::args().nth(2).as_deref() {
        Some("best_peak") => Reducer::BestPeak,
        Some("entropy_weighted") => Reducer::EntropyWeighted,
        _ => Reducer::Mean,
    };
    let config = CascadeConfig {
        aggregation: AggregationStrategy::LatePreserved { reducer },
        ..CascadeConfig::default()
    };
    let run = run_cascade(&images, &cams, &config)?;
    for st in &run.stages {
        let (h, w) = st.estimate.dim();
        let gt = late_mvs::cost::upsample_bilinear(views[0].gt_depth.view(), (h, w));
        let interval = config.stages[st.stage].interval;
        let (mut within, mut valid) = (0, 0);
        for ((d, v), g) in st.estimate.depth.iter().zip(&st.estimate.valid).zip(&gt) {
            if *v {
                valid += 1;
                within += usize::from((d - g).abs() <= 0.5 * interval);
            }
        }
        println!(
            "stage {}: {w}x{h}, {} hypotheses, {:.1}% within {:.2}, {:.2} s",
            st.stage,
            st.hypotheses.count(),
            100.0 * within as f64 / valid.max(1) as f64,
            0.5 * interval,
            st.seconds
        );
    }
    let est = run.final_estimate();
    io::write_pfm(&out, est.depth.mapv(|d| d as f32).view())?;
    println!("{} -> {out}", scene.name);
    Ok(())
}
