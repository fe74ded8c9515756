//! Command-line front end. The `late-mvs` binary only forwards to [`run`].

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::ArrayView2;

use crate::aggregation::{AggregationStrategy, Reducer};
use crate::error::{Error, Result};
use crate::filter::{self, DepthTest, FilterConfig};
use crate::flex::{frustum_anchors, run_flexible};
use crate::io::dataset::{self, ViewSet};
use crate::io::{self, RunConfig, SceneFile};
use crate::metrics::{self, EvalScene, MetricsReport, REPORT_VERSION};

#[derive(Debug, Parser)]
#[command(name = "late-mvs", version, about = "Plane-sweep multi-view stereo with late cost aggregation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render every scene of a scene file into view directories.
    Synth {
        scene_file: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Only render the scene with this name.
        #[arg(long)]
        scene: Option<String>,
    },
    /// Estimate depth for the reference view (or every view).
    Depth {
        views_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Use only the first N views.
        #[arg(long)]
        views: Option<usize>,
        /// Estimate every view in turn, as needed by `fuse`.
        #[arg(long)]
        all_views: bool,
        /// Write the finest stage's volumes as raw dumps.
        #[arg(long)]
        dump_volumes: bool,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Filter per-view depth maps and fuse them into a PLY cloud.
    Fuse {
        views_dir: PathBuf,
        /// Directory written by `depth --all-views`.
        #[arg(long)]
        depth: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write ASCII instead of binary PLY.
        #[arg(long)]
        ascii: bool,
        /// Keep every valid pixel.
        #[arg(long)]
        no_filter: bool,
        #[command(flatten)]
        filter: FilterArgs,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the cascade on one view directory and measure it against its ground truth.
    Eval {
        views_dir: PathBuf,
        /// Report path stem; `.toml` and `.csv` are appended.
        #[arg(long)]
        out: PathBuf,
        /// Also score this cloud against the ground-truth surface.
        #[arg(long)]
        cloud: Option<PathBuf>,
        /// Distance cap of the cloud metrics; defaults to ten finest intervals.
        #[arg(long)]
        dist_cap: Option<f64>,
        /// Depth-accuracy threshold; defaults to two finest intervals.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        timings: bool,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Compare aggregation strategies over every scene of a scene file.
    Compare {
        scene_file: PathBuf,
        /// Report path stem; `.toml` and `.csv` are appended.
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated strategies, e.g. `early_weighted,late_preserved/best_peak`.
        #[arg(long, value_delimiter = ',', default_value = "early_variance,early_weighted,late_preserved/best_peak")]
        strategies: Vec<String>,
        #[arg(long)]
        timings: bool,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        shuffle_seed: Option<u64>,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// early_variance, early_weighted or late_preserved[/reducer].
    #[arg(long)]
    strategy: Option<String>,
    /// Reducer of late_preserved: best_peak, mean or entropy_weighted.
    #[arg(long)]
    reducer: Option<String>,
    #[arg(long)]
    shuffle_seed: Option<u64>,
}

#[derive(Debug, Args)]
struct FilterArgs {
    #[arg(long)]
    conf_threshold: Option<f64>,
    #[arg(long)]
    reproj_px_threshold: Option<f64>,
    #[arg(long)]
    abs_depth_threshold: Option<f64>,
    /// Four comma-separated tier weights.
    #[arg(long, value_delimiter = ',')]
    dyn_view_weights: Option<Vec<f64>>,
    #[arg(long)]
    dyn_score_threshold: Option<f64>,
    /// Compare depths relative to this depth instead of absolutely.
    #[arg(long)]
    relative_depth: Option<f64>,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::from_toml(
            &fs::read_to_string(p).map_err(|e| Error::config(format!("{}: {e}", p.display())))?,
        ),
        None => Ok(RunConfig::default()),
    }
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = load_config(self.config.as_deref())?;
        let reducer = self.reducer.as_deref().map(str::parse::<Reducer>).transpose()?;
        match (&self.strategy, reducer) {
            (Some(s), r) => cfg.cascade.aggregation = AggregationStrategy::parse(s, r)?,
            (None, Some(r)) => match &mut cfg.cascade.aggregation {
                AggregationStrategy::LatePreserved { reducer } => *reducer = r,
                _ => return Err(Error::arg("--reducer needs a late_preserved strategy")),
            },
            (None, None) => {}
        }
        if self.shuffle_seed.is_some() {
            cfg.cascade.shuffle_seed = self.shuffle_seed;
        }
        cfg.cascade.validate()?;
        Ok(cfg)
    }
}

impl FilterArgs {
    fn apply(&self, cfg: &mut FilterConfig) -> Result<()> {
        let set = |dst: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut cfg.conf_threshold, self.conf_threshold);
        set(&mut cfg.reproj_px_threshold, self.reproj_px_threshold);
        set(&mut cfg.abs_depth_threshold, self.abs_depth_threshold);
        set(&mut cfg.dyn_score_threshold, self.dyn_score_threshold);
        if let Some(w) = &self.dyn_view_weights {
            cfg.dyn_view_weights = w
                .as_slice()
                .try_into()
                .map_err(|_| Error::arg("--dyn-view-weights needs exactly four values"))?;
        }
        if let Some(reference_depth) = self.relative_depth {
            cfg.depth_test = DepthTest::Relative { reference_depth };
        }
        cfg.validate()
    }
}

fn views_of(set: &ViewSet) -> Vec<ArrayView2<'_, f32>> {
    set.images.iter().map(|i| i.view()).collect()
}

fn synth(scene_file: &Path, out: &Path, only: Option<&str>) -> Result<()> {
    let file = SceneFile::load(scene_file)?;
    let cfg = RunConfig::default();
    let range = Some((cfg.cascade.depth_min, cfg.cascade.stages[0].interval));
    let mut written = 0;
    for s in file.scenes.iter().filter(|s| only.is_none_or(|n| n == s.name)) {
        let dir = out.join(&s.name);
        dataset::write_views(&dir, &s.render()?, range)?;
        println!("{}: {} views -> {}", s.name, s.rig.count(), dir.display());
        written += 1;
    }
    if written == 0 {
        return Err(Error::arg("no scene matched"));
    }
    Ok(())
}

fn depth(
    views_dir: &Path,
    out: &Path,
    count: Option<usize>,
    all_views: bool,
    dump_volumes: bool,
    run: &RunArgs,
) -> Result<()> {
    let cfg = run.resolve()?;
    let mut set = dataset::read_views(views_dir)?;
    if let Some(n) = count {
        if n < 2 || n > set.len() {
            return Err(Error::arg(format!("--views must be between 2 and {}", set.len())));
        }
        set.images.truncate(n);
        set.cameras.truncate(n);
    }
    let images = views_of(&set);
    let references: Vec<usize> = if all_views { (0..set.len()).collect() } else { vec![0] };
    let first = &cfg.cascade.stages[0];
    let mid_depth = cfg.cascade.depth_min + 0.5 * first.interval * (first.hypotheses - 1) as f64;
    for &r in &references {
        let order: Vec<usize> = std::iter::once(r).chain((0..set.len()).filter(|&i| i != r)).collect();
        let imgs: Vec<_> = order.iter().map(|&i| images[i]).collect();
        let cams: Vec<_> = order.iter().map(|&i| set.cameras[i]).collect();
        let anchors = frustum_anchors(&cams[0], mid_depth, 8);
        let flex = run_flexible(&imgs, &cams, &cfg.cascade, &anchors, &cfg.usefulness)?;
        dataset::write_estimate(out, r, &flex.fused)?;
        let valid = flex.fused.valid.iter().filter(|&&v| v).count();
        println!(
            "view {r}: {:?} mode, {} run(s), {valid}/{} valid pixels",
            flex.mode,
            flex.runs.len(),
            flex.fused.valid.len()
        );
        if dump_volumes {
            let dir = out.join("volumes");
            fs::create_dir_all(&dir)?;
            let last = flex.runs[0].final_stage();
            let raw = crate::cost::assemble_view_preserved(&last.pairwise)?;
            io::write_volume(dir.join(format!("{r:08}_pairwise.vol")), &raw)?;
            io::write_volume(
                dir.join(format!("{r:08}_aggregated.vol")),
                &io::volume::single_channel(&last.aggregated, 0),
            )?;
        }
    }
    fs::write(out.join("config.toml"), cfg.to_toml()?)?;
    Ok(())
}

fn fuse(
    views_dir: &Path,
    depth_dir: &Path,
    out: &Path,
    ascii: bool,
    no_filter: bool,
    args: &FilterArgs,
    config: Option<&Path>,
) -> Result<()> {
    let mut cfg = load_config(config)?.filter;
    args.apply(&mut cfg)?;
    let set = dataset::read_views(views_dir)?;
    let n = dataset::estimate_count(depth_dir)?;
    if n != set.len() {
        return Err(Error::arg(format!(
            "{} holds {n} depth maps for {} views; run `depth --all-views` first",
            depth_dir.display(),
            set.len()
        )));
    }
    let ests = (0..n).map(|i| dataset::read_estimate(depth_dir, i)).collect::<Result<Vec<_>>>()?;
    let masks = if no_filter {
        filter::unfiltered_masks(&ests)
    } else {
        filter::filter_masks(&ests, &set.cameras, &cfg)?
    };
    let cloud = filter::fuse_point_cloud(&ests, &masks, &set.cameras, &views_of(&set), &cfg)?;
    io::write_ply(out, &cloud, ascii)?;
    println!("{} points -> {}", cloud.len(), out.display());
    Ok(())
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn write_report_files(stem: &Path, report: &MetricsReport) -> Result<()> {
    if let Some(parent) = stem.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(with_ext(stem, "toml"), report.to_toml()?)?;
    fs::write(with_ext(stem, "csv"), report.to_csv()?)?;
    Ok(())
}

fn print_summaries(report: &MetricsReport) {
    let pct = |v: Option<f64>| v.map_or("undefined".to_string(), |v| format!("{:.1}%", 100.0 * v));
    println!("{:<28} {:>12} {:>12} {:>12}", "strategy", "preserved", "agg-peak", "accuracy");
    for s in &report.summaries {
        println!(
            "{:<28} {:>12} {:>12} {:>12}",
            s.strategy,
            pct(s.preservation.value),
            pct(s.preservation_aggregated.value),
            pct(s.depth_accuracy.value)
        );
    }
}

#[allow(clippy::too_many_arguments)]
fn eval(
    views_dir: &Path,
    out: &Path,
    cloud: Option<&Path>,
    dist_cap: Option<f64>,
    threshold: Option<f64>,
    timings: bool,
    run: &RunArgs,
) -> Result<()> {
    let cfg = run.resolve()?;
    let set = dataset::read_views(views_dir)?;
    if !set.has_gt() {
        return Err(Error::arg(format!("{} has no ground truth", views_dir.display())));
    }
    let name = views_dir
        .file_name()
        .map_or_else(|| "scene".to_string(), |n| n.to_string_lossy().into_owned());
    let scene = EvalScene {
        name,
        images: set.images.clone(),
        cameras: set.cameras.clone(),
        gt_depth: set.gt_depth[0].clone(),
    };
    let finest = cfg.cascade.finest_interval();
    let threshold = threshold.unwrap_or(2.0 * finest);
    let mut result = metrics::evaluate_scene(&scene, &cfg.cascade, threshold)?;
    if let Some(path) = cloud {
        let pred = io::read_ply(path)?.positions();
        let gt_views: Vec<_> = set.gt_depth.iter().map(|d| d.view()).collect();
        let gt = metrics::backproject_depths(&gt_views, &set.cameras)?;
        result.cloud = Some(metrics::cloud_metrics(&pred, &gt, dist_cap.unwrap_or(10.0 * finest))?);
    }
    if !timings {
        result.timings = None;
    }
    let report = MetricsReport {
        version: REPORT_VERSION,
        measured_stage: "finest".into(),
        depth_threshold: threshold,
        config: cfg.cascade,
        summaries: vec![metrics::StrategySummary {
            strategy: result.strategy.clone(),
            preservation: result.preservation,
            preservation_aggregated: result.preservation_aggregated,
            depth_accuracy: result.depth_accuracy,
        }],
        scenes: vec![result],
    };
    print_summaries(&report);
    if let Some(c) = report.scenes[0].cloud {
        println!("cloud accuracy {:.4} completeness {:.4} overall {:.4}", c.accuracy, c.completeness, c.overall);
    }
    write_report_files(out, &report)
}

fn compare(
    scene_file: &Path,
    out: &Path,
    strategies: &[String],
    timings: bool,
    config: Option<&Path>,
    shuffle_seed: Option<u64>,
) -> Result<()> {
    let mut cfg = load_config(config)?.cascade;
    if shuffle_seed.is_some() {
        cfg.shuffle_seed = shuffle_seed;
    }
    let strategies = strategies
        .iter()
        .map(|s| AggregationStrategy::parse(s.trim(), None))
        .collect::<Result<Vec<_>>>()?;
    let file = SceneFile::load(scene_file)?;
    let suite = file
        .scenes
        .iter()
        .map(|s| EvalScene::from_views(s.name.clone(), &s.render()?))
        .collect::<Result<Vec<_>>>()?;
    let mut report = metrics::compare_strategies(&suite, &strategies, &cfg)?;
    if !timings {
        report = report.without_timings();
    }
    print_summaries(&report);
    write_report_files(out, &report)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { scene_file, out, scene } => synth(&scene_file, &out, scene.as_deref()),
        Command::Depth {
            views_dir,
            out,
            views,
            all_views,
            dump_volumes,
            run,
        } => depth(&views_dir, &out, views, all_views, dump_volumes, &run),
        Command::Fuse {
            views_dir,
            depth,
            out,
            ascii,
            no_filter,
            filter,
            config,
        } => fuse(&views_dir, &depth, &out, ascii, no_filter, &filter, config.as_deref()),
        Command::Eval {
            views_dir,
            out,
            cloud,
            dist_cap,
            threshold,
            timings,
            run,
        } => eval(&views_dir, &out, cloud.as_deref(), dist_cap, threshold, timings, &run),
        Command::Compare {
            scene_file,
            out,
            strategies,
            timings,
            config,
            shuffle_seed,
        } => compare(&scene_file, &out, &strategies, timings, config.as_deref(), shuffle_seed),
    }
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code: 0 on success, 1 for usage or configuration errors,
/// 2 for runtime failures.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage_error() {
                1
            } else {
                2
            }
        }
    }
}
