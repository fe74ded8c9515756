//! Estimates every view of an occlusion scene, filters and fuses them into a PLY cloud.
//!
//! ```text
//! cargo run --release --example fuse_point_cloud -- cloud.ply
//! ```

use late_mvs::filter::{estimate_all_views, filter_masks, fuse_point_cloud, unfiltered_masks, FilterConfig};
use late_mvs::io;
use late_mvs::metrics::{backproject_depths, cloud_metrics};
use late_mvs::pipeline::CascadeConfig;
use late_mvs::scene::occlusion_suite;

fn main() -> late_mvs::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "cloud.ply".into());
    let scene = occlusion_suite()?.remove(0);
    let views = scene.render()?;
    let images: Vec<_> = views.iter().map(|v| v.image.view()).collect();
    let cams: Vec<_> = views.iter().map(|v| v.camera).collect();
    let cascade = CascadeConfig::default();
    let cfg = FilterConfig::for_interval(cascade.finest_interval());
    let ests = estimate_all_views(&images, &cams, &cascade)?;
    let gt_maps: Vec<_> = views.iter().map(|v| v.gt_depth.view()).collect();
    let gt = backproject_depths(&gt_maps, &cams)?;
    for (name, masks) in [("unfiltered", unfiltered_masks(&ests)), ("filtered", filter_masks(&ests, &cams, &cfg)?)] {
        let cloud = fuse_point_cloud(&ests, &masks, &cams, &images, &cfg)?;
        let m = cloud_metrics(&cloud.positions(), &gt, 10.0 * cascade.finest_interval())?;
        println!(
            "{name:<10} {:>6} points, accuracy {:.3}, completeness {:.3}",
            cloud.len(),
            m.accuracy,
            m.completeness
        );
        if name == "filtered" {
            io::write_ply(&out, &cloud, false)?;
        }
    }
    println!("-> {out}");
    Ok(())
}
