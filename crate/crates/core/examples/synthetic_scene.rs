//! Renders one occlusion scene and writes its images and ground-truth depth.
//!
//! ```text
//! cargo run --example synthetic_scene -- out/scene
//! ```

use std::path::PathBuf;

use late_mvs::io::{self, dataset};
use late_mvs::scene::occlusion_suite;

fn main() -> late_mvs::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/scene".into()));
    let suite = occlusion_suite()?;
    let scene = &suite[0];
    let views = scene.render()?;
    dataset::write_views(&dir, &views, None)?;
    for (i, v) in views.iter().enumerate() {
        let hit = v.gt_depth.iter().filter(|&&d| d > 0.0).count();
        let (lo, hi) = v
            .gt_depth
            .iter()
            .filter(|&&d| d > 0.0)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &d| (a.min(d), b.max(d)));
        println!("view {i}: {}x{}, {hit} surface pixels, depth {lo:.1}..{hi:.1}", v.camera.width, v.camera.height);
    }
    let preview = io::image::depth_preview(views[0].gt_depth.mapv(|d| d as f32).view());
    io::write_pgm(dir.join("gt_preview.pgm"), preview.view())?;
    println!("{} -> {}", scene.name, dir.display());
    Ok(())
}
