//! Warps a reference pixel into a source view at several depths and back.
//!
//! ```text
//! cargo run --example reprojection
//! ```

use late_mvs::geometry::{project_to_source, PixelCoord, Projection};
use late_mvs::scene::clean_suite;

fn main() -> late_mvs::Result<()> {
    let cams = clean_suite()?.remove(0).rig.cameras()?;
    let (reference, source) = (&cams[0], &cams[1]);
    let p = PixelCoord::new(40.0, 30.0);
    for depth in [450.0, 500.0, 560.0, 600.0] {
        match project_to_source(p, depth, reference, source)? {
            Projection::Visible { pixel, depth: d } => {
                let back = project_to_source(pixel, d, source, reference)?.pixel();
                println!(
                    "depth {depth:5.0}: ({:.2}, {:.2}) in source at depth {d:.3}, back to {:?}",
                    pixel.u, pixel.v, back.map(|b| (b.u, b.v))
                );
            }
            other => println!("depth {depth:5.0}: {other:?}"),
        }
    }
    Ok(())
}
