//! Writes the built-in clean and occlusion suites as versioned scene files.
//!
//! ```text
//! cargo run --example scene_files -- suites
//! ```

use std::path::PathBuf;

use late_mvs::io::SceneFile;
use late_mvs::scene::{clean_suite, occlusion_suite};

fn main() -> late_mvs::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "suites".into()));
    std::fs::create_dir_all(&dir)?;
    for (name, suite) in [("clean", clean_suite()?), ("occlusion", occlusion_suite()?)] {
        let path = dir.join(format!("{name}.toml"));
        let n = suite.len();
        SceneFile::new(suite).save(&path)?;
        let back = SceneFile::load(&path)?;
        println!("{}: {n} scenes, reloads {}", path.display(), if back.scenes.len() == n { "ok" } else { "BROKEN" });
    }
    Ok(())
}
