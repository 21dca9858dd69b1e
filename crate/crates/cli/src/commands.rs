//! Command-line surface.

use std::ffi::OsString;
use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, ensure, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use polytrace::contours::Connectivity;
use polytrace::geometry::LabeledPolygon;
use polytrace::mcr::{make_training_labels, LabelParams};
use polytrace::metrics::{evaluate_layers, LayerEvaluation, Metric, ScoredPolygon, DEFAULT_PAIRING_RADIUS};
use polytrace::pyramid::{build_pyramid, plan_windows, slice_group, stitch, PixelGrid, PyramidConfig, WindowGeometry, WindowPlan};
use polytrace::tracer::{self, RuleScorer, Scorer, TraceParams};
use polytrace::MaskRaster;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geojson::{read_vector_layer, write_vector_layer, Feature, PixelTransform, VectorLayer};
use crate::graph_io::read_graph;
use crate::raster_io::{read_image, read_mask, write_image, write_mask};
use crate::records::{write_jsonl, FileScorer, LabelRecord, RecordingScorer};

#[derive(Debug, Parser)]
#[command(name = "polytrace", version, about = "Mask-to-polygon extraction and vector map evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Extract polygons from a class mask.
    Trace(TraceArgs),
    /// Build per-point training labels from a mask and reference polygons.
    McrLabel(LabelArgs),
    /// Score a predicted vector layer against a reference layer.
    Eval(EvalArgs),
    /// Cut an image or mask into multi-scale window groups.
    PyramidSlice(SliceArgs),
    /// Reassemble per-window masks into one mask.
    PyramidStitch(StitchArgs),
}

#[derive(Debug, Args)]
struct ReformArgs {
    /// Simplification tolerance in pixels.
    #[arg(long, default_value_t = 5.0)]
    epsilon: f64,
    /// Resampling interval in pixels.
    #[arg(long, default_value_t = 25.0)]
    interval: f64,
    /// Pixel connectivity of mask regions (4 or 8).
    #[arg(long, default_value_t = 8)]
    connectivity: u8,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    jobs: Option<usize>,
}

impl ReformArgs {
    fn validate(&self) -> Result<()> {
        ensure!(self.epsilon.is_finite() && self.epsilon >= 0.0, "--epsilon must be a non-negative number");
        ensure!(self.interval.is_finite() && self.interval > 0.0, "--interval must be positive");
        ensure!(matches!(self.connectivity, 4 | 8), "--connectivity must be 4 or 8");
        Ok(())
    }

    fn connectivity(&self) -> Connectivity {
        Connectivity::from_neighbours(self.connectivity).unwrap_or_default()
    }
}

#[derive(Debug, Args)]
struct TraceArgs {
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    reform: ReformArgs,
    /// `rule`, or `file:PATH` for a line-delimited score file.
    #[arg(long, default_value = "rule")]
    scorer: String,
    /// Rule scorer angle threshold in degrees.
    #[arg(long, default_value_t = 135.0)]
    angle_threshold: f64,
    #[arg(long, default_value_t = tracer::DEFAULT_PROB_THRESHOLD)]
    prob_threshold: f64,
    /// Offset refinement iterations.
    #[arg(long, default_value_t = tracer::DEFAULT_ITERATIONS)]
    iters: usize,
    /// Pixel-to-world transform `x0,dx_col,dx_row,y0,dy_col,dy_row`.
    #[arg(long)]
    pixel_transform: Option<String>,
    /// Also write the reconstructed rings presented to the scorer.
    #[arg(long)]
    emit_queries: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct LabelArgs {
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    reform: ReformArgs,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Reference label mask; also fixes the evaluation grid.
    #[arg(long)]
    gt_mask: Option<PathBuf>,
    /// Comma-separated subset of polis,ciou,ap,iou,f1,apls.
    #[arg(long)]
    metrics: Option<String>,
    #[arg(long, requires = "graph_pred")]
    graph_gt: Option<PathBuf>,
    #[arg(long, requires = "graph_gt")]
    graph_pred: Option<PathBuf>,
    /// APLS node pairing radius in pixels.
    #[arg(long, default_value_t = DEFAULT_PAIRING_RADIUS)]
    pairing_radius: f64,
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Args)]
struct SliceArgs {
    #[arg(long)]
    image: PathBuf,
    /// Downsampling rates, starting at 1.
    #[arg(long, default_value = "1,3,6")]
    rates: String,
    #[arg(long, default_value_t = 1000)]
    window: usize,
    /// Bottom-level step; defaults to the window size.
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Treat the input as a label mask (majority-vote downsampling).
    #[arg(long)]
    mask: bool,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Args)]
struct StitchArgs {
    /// Manifest file, or the directory holding `manifest.json`.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Directory of per-group masks named like the level-0 patches;
    /// defaults to the manifest directory.
    #[arg(long)]
    predictions: Option<PathBuf>,
}

/// Errors that reflect a bug or environment failure rather than bad input.
#[derive(Debug)]
struct Internal(String);

impl fmt::Display for Internal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Internal {}

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_INTERNAL: i32 = 2;

/// Parses `argv` (program name first) and runs the subcommand. Returns 0
/// on success, 1 for invalid input and 2 for internal failures.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_INPUT,
            };
        }
    };
    match catch_unwind(AssertUnwindSafe(|| dispatch(cli.command))) {
        Ok(Ok(())) => EXIT_OK,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Internal>().is_some() {
                EXIT_INTERNAL
            } else {
                EXIT_INPUT
            }
        }
        Err(_) => {
            eprintln!("error: internal failure");
            EXIT_INTERNAL
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Trace(a) => {
            let jobs = a.reform.jobs;
            with_jobs(jobs, || run_trace(&a))
        }
        Command::McrLabel(a) => {
            let jobs = a.reform.jobs;
            with_jobs(jobs, || run_label(&a))
        }
        Command::Eval(a) => with_jobs(a.jobs, || run_eval(&a)),
        Command::PyramidSlice(a) => with_jobs(a.jobs, || run_slice(&a)),
        Command::PyramidStitch(a) => run_stitch(&a),
    }
}

fn with_jobs(jobs: Option<usize>, f: impl FnOnce() -> Result<()> + Send) -> Result<()> {
    match jobs {
        None => f(),
        Some(0) => bail!("--jobs must be at least 1"),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| anyhow!(Internal(format!("thread pool: {e}"))))?
            .install(f),
    }
}

fn parse_transform(s: &str) -> Result<PixelTransform> {
    let c: Vec<f64> = s
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .context("--pixel-transform expects six comma-separated numbers")?;
    let c: [f64; 6] = c
        .try_into()
        .map_err(|_| anyhow!("--pixel-transform expects six comma-separated numbers"))?;
    Ok(PixelTransform::new(c)?)
}

fn run_trace(a: &TraceArgs) -> Result<()> {
    a.reform.validate()?;
    ensure!(
        a.angle_threshold > 0.0 && a.angle_threshold <= 180.0,
        "--angle-threshold must be in (0, 180] degrees"
    );
    ensure!((0.0..=1.0).contains(&a.prob_threshold), "--prob-threshold must be in [0, 1]");
    let transform = a.pixel_transform.as_deref().map(parse_transform).transpose()?.unwrap_or_default();
    let scorer: Box<dyn Scorer> = match a.scorer.as_str() {
        "rule" => Box::new(RuleScorer {
            angle_threshold: a.angle_threshold.to_radians(),
        }),
        s => match s.strip_prefix("file:") {
            Some(path) => Box::new(FileScorer::load(Path::new(path), a.iters)?),
            None => bail!("--scorer must be `rule` or `file:PATH`, got {s:?}"),
        },
    };
    let mask = read_mask(&a.mask)?;
    info!("tracing {}x{} mask", mask.width(), mask.height());
    let params = TraceParams {
        epsilon: a.reform.epsilon,
        interval: a.reform.interval,
        iterations: a.iters,
        prob_threshold: a.prob_threshold,
        connectivity: a.reform.connectivity(),
    };
    let (output, queries) = match &a.emit_queries {
        Some(_) => {
            let rec = RecordingScorer::new(scorer.as_ref());
            let out = tracer::trace(&mask, &rec, &params);
            (out, Some(rec.into_records()))
        }
        None => (tracer::trace(&mask, scorer.as_ref(), &params), None),
    };
    drop(mask);
    let layer = VectorLayer {
        features: output
            .polygons
            .into_iter()
            .map(|p| Feature {
                class: p.class,
                polygon: p.traced.polygon,
                instance_score: Some(p.traced.instance_score),
                vertex_conf: Some(p.traced.vertex_conf),
            })
            .collect(),
        transform,
    };
    info!("writing {} polygons", layer.features.len());
    write_vector_layer(&layer, &a.out)?;
    if let (Some(path), Some(q)) = (&a.emit_queries, queries) {
        write_jsonl(path, q)?;
    }
    if !output.failures.is_empty() {
        for f in &output.failures {
            warn!("instance {}: {}", f.instance_id, f.error);
        }
        bail!("{} instance(s) could not be traced: first was instance {}: {}", output.failures.len(), output.failures[0].instance_id, output.failures[0].error);
    }
    Ok(())
}

fn labeled(layer: VectorLayer) -> Vec<LabeledPolygon> {
    layer
        .features
        .into_iter()
        .map(|f| LabeledPolygon {
            class: f.class,
            polygon: f.polygon,
        })
        .collect()
}

fn run_label(a: &LabelArgs) -> Result<()> {
    a.reform.validate()?;
    let mask = read_mask(&a.mask)?;
    let gt = labeled(read_vector_layer(&a.gt)?);
    let params = LabelParams {
        epsilon: a.reform.epsilon,
        interval: a.reform.interval,
        connectivity: a.reform.connectivity(),
    };
    let set = make_training_labels(&mask, &gt, params)?;
    info!(
        "{} samples, {} unpaired contours, {} unpaired holes",
        set.samples.len(),
        set.skipped_contours,
        set.skipped_holes
    );
    write_jsonl(&a.out, set.samples.iter().map(LabelRecord::from))?;
    Ok(())
}

fn layer_grid(layers: &[&VectorLayer]) -> (usize, usize) {
    let (mut w, mut h) = (1usize, 1usize);
    for f in layers.iter().flat_map(|l| &l.features) {
        let (_, hi) = f.polygon.bounds();
        w = w.max(hi.x.ceil().max(0.0) as usize);
        h = h.max(hi.y.ceil().max(0.0) as usize);
    }
    (w, h)
}

fn run_eval(a: &EvalArgs) -> Result<()> {
    let metrics: Vec<Metric> = match &a.metrics {
        Some(list) => list
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.parse::<Metric>().map_err(|e| anyhow!(e)))
            .collect::<Result<_>>()?,
        None if a.graph_gt.is_some() => Metric::ALL.to_vec(),
        None => Metric::ALL.into_iter().filter(|&m| m != Metric::Apls).collect(),
    };
    ensure!(!metrics.is_empty(), "--metrics names no metric");
    if metrics.contains(&Metric::Apls) {
        ensure!(a.graph_gt.is_some(), "apls needs --graph-gt and --graph-pred");
    }
    ensure!(a.pairing_radius.is_finite() && a.pairing_radius >= 0.0, "--pairing-radius must be non-negative");

    let pred_layer = read_vector_layer(&a.pred)?;
    let gt_layer = read_vector_layer(&a.gt)?;
    let gt_mask: Option<MaskRaster> = a.gt_mask.as_deref().map(read_mask).transpose()?;
    let grid = match &gt_mask {
        Some(m) => (m.width(), m.height()),
        None => layer_grid(&[&pred_layer, &gt_layer]),
    };
    let pred: Vec<ScoredPolygon> = pred_layer
        .features
        .into_iter()
        .map(|f| ScoredPolygon {
            class: f.class,
            polygon: f.polygon,
            score: f.instance_score.unwrap_or(1.0),
        })
        .collect();
    let gt = labeled(gt_layer);
    let graphs = match (&a.graph_gt, &a.graph_pred) {
        (Some(g), Some(p)) => Some((read_graph(g)?, read_graph(p)?)),
        _ => None,
    };
    let mut req = LayerEvaluation::new(&pred, &gt, grid);
    req.gt_mask = gt_mask.as_ref();
    req.graphs = graphs.as_ref().map(|(g, p)| (g, p));
    req.pairing_radius = a.pairing_radius;
    req.metrics = metrics.into_iter().collect();
    let report = evaluate_layers(&req)?;
    let mut text = serde_json::to_string_pretty(&report).map_err(|e| anyhow!(Internal(e.to_string())))?;
    text.push('\n');
    std::fs::write(&a.report, text).with_context(|| format!("writing {}", a.report.display()))?;
    Ok(())
}

/// Slicing manifest: the window plan plus the patch files of each group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub source: String,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub mask: bool,
    pub config: PyramidConfig,
    pub groups: Vec<ManifestGroup>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestGroup {
    #[serde(flatten)]
    pub geometry: WindowGeometry,
    /// Patch file per level, relative to the manifest.
    pub files: Vec<String>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

pub fn patch_name(group: usize, level: usize) -> String {
    format!("g{group:05}_l{level}.png")
}

fn parse_rates(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|v| v.trim().parse::<usize>().with_context(|| format!("bad rate {v:?}")))
        .collect()
}

fn run_slice(a: &SliceArgs) -> Result<()> {
    let config = PyramidConfig::new(parse_rates(&a.rates)?, a.window, a.stride.unwrap_or(a.window))?;
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let manifest = if a.mask {
        let m = read_mask(&a.image)?;
        slice_to_files(&m, &config, &a.out_dir, |p, path| Ok(write_mask(p, path)?))?
    } else {
        let img = read_image(&a.image)?;
        slice_to_files(&img, &config, &a.out_dir, |p, path| Ok(write_image(p, path)?))?
    };
    let manifest = Manifest {
        source: a.image.display().to_string(),
        mask: a.mask,
        ..manifest
    };
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| anyhow!(Internal(e.to_string())))?;
    text.push('\n');
    std::fs::write(a.out_dir.join(MANIFEST_NAME), text).context("writing manifest")?;
    info!("wrote {} window groups", manifest.groups.len());
    Ok(())
}

fn slice_to_files<T: PixelGrid + Clone>(
    src: &T,
    config: &PyramidConfig,
    dir: &Path,
    write: impl Fn(&T, &Path) -> Result<()> + Sync,
) -> Result<Manifest> {
    let plan: WindowPlan = plan_windows(src.width(), src.height(), config)?;
    let pyramid = build_pyramid(src, &config.rates);
    let groups = plan
        .groups
        .par_iter()
        .map(|g| {
            let patches = slice_group(&pyramid, g, config.window);
            let mut files = Vec::with_capacity(patches.len());
            for (level, p) in patches.iter().enumerate() {
                let name = patch_name(g.index, level);
                write(p, &dir.join(&name))?;
                files.push(name);
            }
            Ok(ManifestGroup {
                geometry: g.clone(),
                files,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Manifest {
        source: String::new(),
        width: plan.width,
        height: plan.height,
        channels: src.channels(),
        mask: false,
        config: plan.config,
        groups,
    })
}

fn run_stitch(a: &StitchArgs) -> Result<()> {
    let manifest_path = if a.manifest.is_dir() {
        a.manifest.join(MANIFEST_NAME)
    } else {
        a.manifest.clone()
    };
    let text = std::fs::read_to_string(&manifest_path).with_context(|| format!("reading {}", manifest_path.display()))?;
    let manifest: Manifest =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", manifest_path.display()))?;
    let base = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let dir = a.predictions.clone().unwrap_or(base);
    let plan = WindowPlan {
        width: manifest.width,
        height: manifest.height,
        config: manifest.config.clone(),
        groups: manifest.groups.iter().map(|g| g.geometry.clone()).collect(),
    };
    ensure!(
        plan_windows(plan.width, plan.height, &plan.config)?.groups == plan.groups,
        "manifest window geometry does not match its config"
    );
    let mut masks = Vec::with_capacity(manifest.groups.len());
    for g in &manifest.groups {
        let name = g.files.first().ok_or_else(|| anyhow!("group {} lists no files", g.geometry.index))?;
        let path = dir.join(name);
        if !path.exists() {
            return Err(polytrace::pyramid::PyramidError::IncompleteCoverage(g.geometry.index))
                .with_context(|| format!("{} is missing", path.display()));
        }
        masks.push((g.geometry.index, read_mask(&path)?));
    }
    let out = stitch(&plan, &masks)?;
    write_mask(&out, &a.out)?;
    Ok(())
}
