//! File formats: PFM depth maps, PLY clouds, PGM/PPM images, text cameras,
//! versioned TOML documents and raw volume dumps.

pub mod cam;
pub mod dataset;
pub mod image;
pub mod pfm;
pub mod ply;
pub mod volume;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::FilterConfig;
use crate::flex::UsefulnessParams;
use crate::metrics::MetricsReport;
use crate::pipeline::CascadeConfig;
use crate::scene::SuiteScene;

pub use cam::{read_cam, write_cam, CamRecord};
pub use image::{read_gray, write_pgm, write_ppm};
pub use pfm::{read_pfm, write_pfm};
pub use ply::{read_ply, write_ply};
pub use volume::{read_volume, write_volume};

pub const CONFIG_VERSION: u32 = 1;
pub const SCENE_VERSION: u32 = 1;

fn check_version(kind: &'static str, found: u32, supported: u32) -> Result<()> {
    if found != supported {
        return Err(Error::format(kind, format!("unsupported version {found} (expected {supported})")));
    }
    Ok(())
}

/// Run settings. Missing sections and fields take their defaults; filter
/// defaults follow the cascade's finest interval.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub version: u32,
    pub cascade: CascadeConfig,
    pub filter: FilterConfig,
    pub usefulness: UsefulnessParams,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRunConfig {
    version: u32,
    #[serde(default)]
    cascade: CascadeConfig,
    filter: Option<toml::Table>,
    #[serde(default)]
    usefulness: UsefulnessParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        let cascade = CascadeConfig::default();
        Self {
            version: CONFIG_VERSION,
            filter: FilterConfig::for_interval(cascade.finest_interval()),
            cascade,
            usefulness: UsefulnessParams::default(),
        }
    }
}

fn filter_over_defaults(given: Option<toml::Table>, finest_interval: f64) -> Result<FilterConfig> {
    let defaults = FilterConfig::for_interval(finest_interval);
    let Some(given) = given else {
        return Ok(defaults);
    };
    let mut merged = toml::Table::try_from(&defaults).map_err(|e| Error::config(e.to_string()))?;
    for (key, value) in given {
        if !merged.contains_key(&key) {
            return Err(Error::config(format!("unknown filter field `{key}`")));
        }
        merged.insert(key, value);
    }
    merged.try_into().map_err(|e: toml::de::Error| Error::config(e.to_string()))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: RawRunConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        check_version("config", raw.version, CONFIG_VERSION).map_err(|e| Error::config(e.to_string()))?;
        let filter = filter_over_defaults(raw.filter, raw.cascade.finest_interval())?;
        let cfg = Self {
            version: raw.version,
            cascade: raw.cascade,
            filter,
            usefulness: raw.usefulness,
        };
        cfg.cascade.validate()?;
        cfg.filter.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::format("config", e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }
}

/// A list of scenes with their rigs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub version: u32,
    pub scenes: Vec<SuiteScene>,
}

impl SceneFile {
    pub fn new(scenes: Vec<SuiteScene>) -> Self {
        Self {
            version: SCENE_VERSION,
            scenes,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: Self = toml::from_str(text).map_err(|e| Error::format("scene", e.to_string()))?;
        check_version("scene", file.version, SCENE_VERSION)?;
        for s in &file.scenes {
            s.scene.validate()?;
        }
        Ok(file)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::format("scene", e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(fs::write(path, self.to_toml()?)?)
    }
}

/// Writes `<stem>.toml` and `<stem>.csv`.
pub fn write_report(dir: impl AsRef<Path>, stem: &str, report: &MetricsReport) -> Result<()> {
    let dir = dir.as_ref();
    fs::write(dir.join(format!("{stem}.toml")), report.to_toml()?)?;
    fs::write(dir.join(format!("{stem}.csv")), report.to_csv()?)?;
    Ok(())
}

pub fn read_report(path: impl AsRef<Path>) -> Result<MetricsReport> {
    MetricsReport::from_toml(&fs::read_to_string(path)?)
}
