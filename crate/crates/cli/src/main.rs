//! `flowtrack` — occlusion-aware sparse point tracking from the shell.
//!
//! Subcommands: `track` runs a tracker over a synthetic scene or a PNG
//! sequence and writes a trajectory JSON; `evaluate` scores a trajectory
//! against ground truth; `synth` emits a benchmark scene (frames, masks,
//! ground truth); `init-queries` picks first-frame query points from a
//! rectified stereo pair; `compare` runs several tracker configurations on
//! one scene and tabulates metrics plus per-frame latency.
//!
//! Exit codes: 0 ok, 2 bad configuration, 3 missing input file, 4 dimension
//! misalignment, 5 degenerate data. Every command is deterministic given its
//! config and seeds; reruns produce byte-identical trajectory, metric, scene
//! and query files (`compare` latency columns are wall-clock by nature and
//! excluded from that guarantee).

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use flowtrack_core::amfst::{AmfstConfig, AmfstTracker};
use flowtrack_core::flow::{
    BlockMatchingBackend, BlockMatchingConfig, FlowBackend, FrameFeatures, OracleBackend,
};
use flowtrack_core::image::GrayImage;
use flowtrack_core::init::{
    auto_disparity_range, compute_disparity, kmedoids, load_image_sequence, read_queries_csv,
    threshold_foreground, write_queries_csv, DisparityConfig,
};
use flowtrack_core::metrics::{evaluate_run, MetricsReport};
use flowtrack_core::mfst::{MfstConfig, MfstTracker, DEFAULT_INTERVALS};
use flowtrack_core::synth::{generate_scene, render_frames, SceneConfig};
use flowtrack_core::tracker::{default_tau, PointTracker, TrackOutputFrame};
use flowtrack_core::{Error as CoreError, Point2};

const TRAJECTORY_VERSION: u32 = 1;
const GROUND_TRUTH_VERSION: u32 = 1;
const COMPARE_VERSION: u32 = 1;

// ---------- exit-code taxonomy ----------

const EXIT_CONFIG: i32 = 2;
const EXIT_MISSING: i32 = 3;
const EXIT_MISALIGNED: i32 = 4;
const EXIT_DEGENERATE: i32 = 5;

/// Error carrying one of the documented exit codes.
#[derive(Debug)]
struct CodedError {
    code: i32,
    msg: String,
}

impl fmt::Display for CodedError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.msg)
    }
}

impl std::error::Error for CodedError {}

fn coded(code: i32, msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(CodedError {
        code,
        msg: msg.into(),
    })
}

fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(c) = cause.downcast_ref::<CodedError>() {
            return c.code;
        }
        if let Some(c) = cause.downcast_ref::<CoreError>() {
            return match c {
                CoreError::InvalidInput(_) | CoreError::ConfigRejected { .. } => EXIT_CONFIG,
                CoreError::Io(_) | CoreError::MissingInSequence { .. } => EXIT_MISSING,
                CoreError::DimensionMismatch(_) => EXIT_MISALIGNED,
                CoreError::UndefinedMetric(_) => EXIT_DEGENERATE,
                _ => 1,
            };
        }
        if let Some(io) = cause.downcast_ref::<std::io::Error>() {
            if io.kind() == std::io::ErrorKind::NotFound {
                return EXIT_MISSING;
            }
        }
    }
    1
}

/// All referenced input paths must exist before any work starts.
fn require_exists(path: &Path, what: &str) -> anyhow::Result<()> {
    if !path.exists() {
        return Err(coded(
            EXIT_MISSING,
            format!("{} not found: {}", what, path.display()),
        ));
    }
    Ok(())
}

// ---------- command line ----------

#[derive(Parser)]
#[command(name = "flowtrack", version, about = "Occlusion-aware sparse point tracking")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Track query points through a scene and write a trajectory JSON.
    Track(TrackArgs),
    /// Score a trajectory file against a ground-truth file.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic benchmark scene directory.
    Synth(SynthArgs),
    /// Derive first-frame query points from a rectified stereo pair.
    InitQueries(InitQueriesArgs),
    /// Run several tracker configs on one scene and tabulate metrics.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum TrackerKind {
    /// Previous-frame chaining only (drift baseline).
    Chain,
    /// Fixed candidate schedule {0} ∪ {t−Δ}.
    Mfst,
    /// Adaptive reliable-frame selection.
    Amfst,
}

impl TrackerKind {
    fn name(self) -> &'static str {
        match self {
            TrackerKind::Chain => "chain",
            TrackerKind::Mfst => "mfst",
            TrackerKind::Amfst => "amfst",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum BackendKind {
    /// Closed-form scene flow (requires --scene).
    Oracle,
    /// Scene flow plus seeded Gaussian noise (requires --scene).
    OracleNoisy,
    /// Pyramidal SAD block matching on PNG frames (requires --frames).
    BlockMatching,
}

impl BackendKind {
    fn name(self) -> &'static str {
        match self {
            BackendKind::Oracle => "oracle",
            BackendKind::OracleNoisy => "oracle-noisy",
            BackendKind::BlockMatching => "block-matching",
        }
    }
}

#[derive(Args, Debug, Clone)]
struct TrackArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Trajectory JSON output path.
    #[arg(long)]
    out: PathBuf,
}

/// One tracker run; also the JSON schema for `compare` config entries.
#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct RunArgs {
    /// Row label in compare output (defaults to the tracker name).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<String>,

    /// Tracker to run.
    #[arg(long, value_enum, default_value = "amfst")]
    tracker: TrackerKind,

    /// Flow backend.
    #[arg(long, value_enum, default_value = "oracle")]
    backend: BackendKind,

    /// Occlusion threshold τ in px (default scales with image diagonal).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    tau: Option<f64>,

    /// Reliable-frame budget n_f (amfst).
    #[arg(long, default_value_t = 6)]
    nf: usize,

    /// Combination size N (amfst; defaults to n_f).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    combo_size: Option<usize>,

    /// Candidate intervals Δ for mfst, comma-separated.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_INTERVALS)]
    intervals: Vec<u32>,

    /// Scene config JSON (oracle backends).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    scene: Option<PathBuf>,

    /// Directory of numbered frame PNGs (block-matching backend).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    frames: Option<PathBuf>,

    /// Directory of numbered occluder-mask PNGs (nonzero = occluded).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    masks: Option<PathBuf>,

    /// Query CSV `x,y` (defaults to scene ground-truth frame-0 positions).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    queries: Option<PathBuf>,

    /// Ground-truth JSON (required for compare rows with --backend block-matching).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    gt: Option<PathBuf>,

    /// Noise seed for oracle-noisy.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Noise std in px for oracle-noisy.
    #[arg(long, default_value_t = 0.5)]
    sigma: f64,
}

impl Default for RunArgs {
    fn default() -> Self {
        RunArgs {
            label: None,
            tracker: TrackerKind::Amfst,
            backend: BackendKind::Oracle,
            tau: None,
            nf: 6,
            combo_size: None,
            intervals: DEFAULT_INTERVALS.to_vec(),
            scene: None,
            frames: None,
            masks: None,
            queries: None,
            gt: None,
            seed: 0,
            sigma: 0.5,
        }
    }
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Trajectory JSON produced by `track`.
    trajectory: PathBuf,
    /// Ground-truth JSON produced by `synth`.
    #[arg(long)]
    gt: PathBuf,
    /// Report JSON output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional CSV of the MEE-over-duration curve.
    #[arg(long)]
    curve: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Scene config JSON.
    #[arg(long)]
    scene: PathBuf,
    /// Output directory (created; gets frames/, masks/, gt.json, scene.json).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct InitQueriesArgs {
    /// Left rectified image (PNG).
    #[arg(long)]
    left: PathBuf,
    /// Right rectified image (PNG).
    #[arg(long)]
    right: PathBuf,
    /// Number of query points.
    #[arg(short, long)]
    k: usize,
    /// Lower disparity bound; omit both bounds for the automatic range.
    #[arg(long, requires = "max_disp")]
    min_disp: Option<f32>,
    /// Upper disparity bound.
    #[arg(long, requires = "min_disp")]
    max_disp: Option<f32>,
    /// Queries CSV output path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// JSON config: {"runs": [<track run objects>]}.
    #[arg(long)]
    config: PathBuf,
    /// Report JSON output path (stdout table always printed).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional CSV of per-method MEE-over-duration curves.
    #[arg(long)]
    curves: Option<PathBuf>,
}

// ---------- file schemas ----------

#[derive(Serialize, Deserialize)]
struct TrajectoryPoint {
    x: f64,
    y: f64,
    occluded: bool,
    source_frame: Option<u32>,
}

#[derive(Serialize, Deserialize)]
struct TrajectoryFrame {
    t: u32,
    points: Vec<TrajectoryPoint>,
}

#[derive(Serialize, Deserialize)]
struct TrajectoryFile {
    version: u32,
    config: RunArgs,
    frames: Vec<TrajectoryFrame>,
}

#[derive(Serialize, Deserialize)]
struct GroundTruthFile {
    version: u32,
    /// positions[t][p]
    positions: Vec<Vec<Point2>>,
    /// occluded[t][p]
    occluded: Vec<Vec<bool>>,
}

#[derive(Deserialize)]
struct CompareConfigFile {
    runs: Vec<RunArgs>,
}

#[derive(Serialize, Deserialize)]
struct CompareRow {
    label: String,
    tracker: TrackerKind,
    backend: BackendKind,
    mee_px: f64,
    mcd_px: f64,
    delta_avg: f64,
    latency_ms_mean: f64,
    latency_ms_p95: f64,
}

#[derive(Serialize, Deserialize)]
struct CompareReport {
    version: u32,
    rows: Vec<CompareRow>,
}

// ---------- run plumbing ----------

/// Everything a tracker run needs, resolved and loaded up front.
/// Per-frame positions and occlusion flags, indexed `[t][point]`.
type GtArrays = (Vec<Vec<Point2>>, Vec<Vec<bool>>);

struct PreparedRun {
    args: RunArgs,
    backend: Arc<dyn FlowBackend>,
    features: Vec<FrameFeatures>,
    masks: Option<Vec<GrayImage>>,
    queries: Vec<Point2>,
    /// Ground truth when available (from the scene or --gt); compare needs it.
    gt: Option<GtArrays>,
}

fn load_scene_config(path: &Path) -> anyhow::Result<SceneConfig> {
    require_exists(path, "scene config")?;
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let config: SceneConfig = serde_json::from_str(&text)
        .map_err(|e| coded(EXIT_CONFIG, format!("bad scene config {}: {}", path.display(), e)))?;
    Ok(config)
}

fn load_ground_truth_file(path: &Path) -> anyhow::Result<GroundTruthFile> {
    require_exists(path, "ground truth")?;
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let gt: GroundTruthFile = serde_json::from_str(&text)
        .map_err(|e| coded(EXIT_CONFIG, format!("bad ground truth {}: {}", path.display(), e)))?;
    if gt.positions.len() != gt.occluded.len() {
        return Err(coded(
            EXIT_MISALIGNED,
            format!(
                "{}: {} position frames vs {} occlusion frames",
                path.display(),
                gt.positions.len(),
                gt.occluded.len()
            ),
        ));
    }
    Ok(gt)
}

fn load_masks(dir: &Path, n_frames: usize) -> anyhow::Result<Vec<GrayImage>> {
    require_exists(dir, "mask directory")?;
    let seq = load_image_sequence(dir)?;
    if seq.len() != n_frames {
        return Err(coded(
            EXIT_MISALIGNED,
            format!("{} masks for {} frames", seq.len(), n_frames),
        ));
    }
    Ok((0..seq.len()).map(|t| seq.frame(t).unwrap().clone()).collect())
}

fn prepare_run(args: &RunArgs) -> anyhow::Result<PreparedRun> {
    let mut args = args.clone();
    let (backend, features, gt): (Arc<dyn FlowBackend>, Vec<FrameFeatures>, Option<GtArrays>);
    let scene_masks;
    match args.backend {
        BackendKind::Oracle | BackendKind::OracleNoisy => {
            let scene_path = args.scene.as_ref().ok_or_else(|| {
                coded(EXIT_CONFIG, "oracle backends need --scene")
            })?;
            let config = load_scene_config(scene_path)?;
            let (truth, field) = generate_scene(&config)?;
            let oracle = match args.backend {
                BackendKind::Oracle => OracleBackend::exact(field),
                _ => OracleBackend::with_noise(field, args.sigma, args.seed)?,
            };
            features = (0..config.frame_count)
                .map(|t| oracle.scene_features(t))
                .collect();
            scene_masks = truth.masks.clone();
            gt = Some((truth.positions, truth.mask_occluded));
            backend = Arc::new(oracle);
        }
        BackendKind::BlockMatching => {
            let frames_dir = args.frames.as_ref().ok_or_else(|| {
                coded(EXIT_CONFIG, "block-matching backend needs --frames")
            })?;
            require_exists(frames_dir, "frame directory")?;
            let seq = load_image_sequence(frames_dir)?;
            let matcher = BlockMatchingBackend::new(BlockMatchingConfig::default())?;
            features = (0..seq.len())
                .map(|t| matcher.extract_features(seq.frame(t).unwrap(), t as u32))
                .collect::<Result<_, _>>()?;
            scene_masks = None;
            gt = match &args.gt {
                Some(path) => {
                    let f = load_ground_truth_file(path)?;
                    Some((f.positions, f.occluded))
                }
                None => None,
            };
            backend = Arc::new(matcher);
        }
    }
    if features.is_empty() {
        return Err(coded(EXIT_DEGENERATE, "scene has no frames"));
    }

    let masks = match &args.masks {
        Some(dir) => Some(load_masks(dir, features.len())?),
        None => scene_masks,
    };

    let queries = match &args.queries {
        Some(path) => {
            require_exists(path, "queries")?;
            read_queries_csv(path)?
        }
        None => match &gt {
            Some((positions, _)) => positions[0].clone(),
            None => {
                return Err(coded(
                    EXIT_CONFIG,
                    "--queries is required when no scene ground truth is available",
                ))
            }
        },
    };
    if queries.is_empty() {
        return Err(coded(EXIT_DEGENERATE, "no query points"));
    }

    // Resolve the default τ now so the config echo pins the value used.
    if args.tau.is_none() {
        args.tau = Some(default_tau(features[0].width(), features[0].height()));
    }

    Ok(PreparedRun {
        args,
        backend,
        features,
        masks,
        queries,
        gt,
    })
}

fn build_tracker(run: &PreparedRun) -> anyhow::Result<Box<dyn PointTracker>> {
    let tau = run.args.tau.expect("resolved in prepare_run");
    let first = run.features[0].clone();
    let tracker: Box<dyn PointTracker> = match run.args.tracker {
        TrackerKind::Chain => Box::new(MfstTracker::new(
            run.backend.clone(),
            first,
            &run.queries,
            MfstConfig::chain(tau),
        )?),
        TrackerKind::Mfst => Box::new(MfstTracker::new(
            run.backend.clone(),
            first,
            &run.queries,
            MfstConfig::new(tau).with_intervals(run.args.intervals.clone()),
        )?),
        TrackerKind::Amfst => {
            let mut config = AmfstConfig::new(run.args.nf, tau);
            if let Some(n) = run.args.combo_size {
                config = config.with_combo_size(n);
            }
            Box::new(AmfstTracker::new(
                run.backend.clone(),
                first,
                &run.queries,
                config,
            )?)
        }
    };
    Ok(tracker)
}

/// Drive the tracker over all frames. Returns the output frames plus the
/// wall-clock seconds of each `step` call (flow compute included, I/O not —
/// features and masks are loaded before the clock starts).
fn execute_run(run: &PreparedRun) -> anyhow::Result<(Vec<TrackOutputFrame>, Vec<f64>)> {
    let mut tracker = build_tracker(run)?;
    let mut frames = Vec::with_capacity(run.features.len());
    frames.push(tracker.initial_frame());
    let mut step_seconds = Vec::new();
    for t in 1..run.features.len() {
        let mask = run.masks.as_ref().map(|m| &m[t]);
        let start = Instant::now();
        let out = tracker.step(run.features[t].clone(), mask)?;
        step_seconds.push(start.elapsed().as_secs_f64());
        frames.push(out);
    }
    Ok((frames, step_seconds))
}

fn to_trajectory(args: &RunArgs, frames: &[TrackOutputFrame]) -> TrajectoryFile {
    TrajectoryFile {
        version: TRAJECTORY_VERSION,
        config: args.clone(),
        frames: frames
            .iter()
            .map(|f| TrajectoryFrame {
                t: f.frame_id,
                points: f
                    .points
                    .iter()
                    .map(|p| TrajectoryPoint {
                        x: p.position.x,
                        y: p.position.y,
                        occluded: p.occluded,
                        source_frame: p.source_frame,
                    })
                    .collect(),
            })
            .collect(),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn latency_stats(step_seconds: &[f64]) -> (f64, f64) {
    if step_seconds.is_empty() {
        return (0.0, 0.0);
    }
    let mean = step_seconds.iter().sum::<f64>() / step_seconds.len() as f64;
    let mut sorted = step_seconds.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = ((0.95 * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    (mean * 1e3, sorted[rank - 1] * 1e3)
}

// ---------- subcommands ----------

fn cmd_track(args: TrackArgs) -> anyhow::Result<()> {
    let run = prepare_run(&args.run)?;
    let (frames, step_seconds) = execute_run(&run)?;
    let trajectory = to_trajectory(&run.args, &frames);
    write_json(&args.out, &trajectory)?;
    let (mean_ms, p95_ms) = latency_stats(&step_seconds);
    eprintln!(
        "tracked {} points over {} frames ({} backend, {} tracker): {:.3} ms/frame mean, {:.3} ms p95 -> {}",
        run.queries.len(),
        frames.len(),
        run.args.backend.name(),
        run.args.tracker.name(),
        mean_ms,
        p95_ms,
        args.out.display()
    );
    Ok(())
}

fn load_trajectory(path: &Path) -> anyhow::Result<TrajectoryFile> {
    require_exists(path, "trajectory")?;
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text)
        .map_err(|e| coded(EXIT_CONFIG, format!("bad trajectory {}: {}", path.display(), e)))
}

/// Check trajectory-vs-ground-truth alignment, then score.
fn score(
    trajectory: &TrajectoryFile,
    gt: &GroundTruthFile,
) -> anyhow::Result<MetricsReport> {
    if trajectory.frames.len() != gt.positions.len() {
        return Err(coded(
            EXIT_MISALIGNED,
            format!(
                "{} trajectory frames vs {} ground-truth frames",
                trajectory.frames.len(),
                gt.positions.len()
            ),
        ));
    }
    let n_points = gt.positions.first().map_or(0, |f| f.len());
    for (t, frame) in trajectory.frames.iter().enumerate() {
        if frame.points.len() != n_points {
            return Err(coded(
                EXIT_MISALIGNED,
                format!(
                    "frame {}: {} trajectory points vs {} ground-truth points",
                    t,
                    frame.points.len(),
                    n_points
                ),
            ));
        }
    }
    let pred: Vec<Vec<Point2>> = trajectory
        .frames
        .iter()
        .map(|f| f.points.iter().map(|p| Point2::new(p.x, p.y)).collect())
        .collect();
    Ok(evaluate_run(&pred, &gt.positions, &gt.occluded)?)
}

fn write_curve_csv(path: &Path, labels: &[String], curves: &[Vec<(u32, f64)>]) -> anyhow::Result<()> {
    let mut text = String::from("t");
    for label in labels {
        text.push(',');
        text.push_str(label);
    }
    text.push('\n');
    // All runs share the scene, hence the frame axis of the first curve.
    for (i, &(t, _)) in curves[0].iter().enumerate() {
        text.push_str(&t.to_string());
        for curve in curves {
            text.push(',');
            text.push_str(&format!("{}", curve[i].1));
        }
        text.push('\n');
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> anyhow::Result<()> {
    let trajectory = load_trajectory(&args.trajectory)?;
    let gt = load_ground_truth_file(&args.gt)?;
    let report = score(&trajectory, &gt)?;
    if let Some(curve_path) = &args.curve {
        write_curve_csv(
            curve_path,
            &["mee_px".into()],
            std::slice::from_ref(&report.mee_by_duration),
        )?;
    }
    match &args.out {
        Some(path) => write_json(path, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> anyhow::Result<()> {
    let config = load_scene_config(&args.scene)?;
    let (gt, _) = generate_scene(&config)?;
    let frames = render_frames(&config, &gt)?;

    let frames_dir = args.out.join("frames");
    fs::create_dir_all(&frames_dir)?;
    for (t, frame) in frames.iter().enumerate() {
        frame.save_png(&frames_dir.join(format!("{:03}.png", t)))?;
    }
    if let Some(masks) = &gt.masks {
        let masks_dir = args.out.join("masks");
        fs::create_dir_all(&masks_dir)?;
        for (t, mask) in masks.iter().enumerate() {
            mask.save_png(&masks_dir.join(format!("{:03}.png", t)))?;
        }
    }
    write_json(
        &args.out.join("gt.json"),
        &GroundTruthFile {
            version: GROUND_TRUTH_VERSION,
            positions: gt.positions.clone(),
            occluded: gt.mask_occluded.clone(),
        },
    )?;
    write_json(&args.out.join("scene.json"), &config)?;
    eprintln!(
        "wrote {} frames ({}x{}, {} points{}) -> {}",
        frames.len(),
        config.width,
        config.height,
        config.point_count,
        if gt.masks.is_some() { ", masks" } else { "" },
        args.out.display()
    );
    Ok(())
}

fn cmd_init_queries(args: InitQueriesArgs) -> anyhow::Result<()> {
    require_exists(&args.left, "left image")?;
    require_exists(&args.right, "right image")?;
    let left = GrayImage::load_png(&args.left)?;
    let right = GrayImage::load_png(&args.right)?;
    let disparity = compute_disparity(&left, &right, &DisparityConfig::default())?;

    let (min_disp, max_disp, source) = match (args.min_disp, args.max_disp) {
        (Some(lo), Some(hi)) => (lo, hi, "explicit"),
        _ => {
            let (mut lo, mut hi) = auto_disparity_range(&disparity).ok_or_else(|| {
                coded(
                    EXIT_DEGENERATE,
                    "no valid disparities; pass --min-disp/--max-disp manually",
                )
            })?;
            // A flat disparity surface gives an empty band; widen to 1 px.
            if hi - lo < 1.0 {
                lo -= 0.5;
                hi += 0.5;
            }
            (lo, hi, "auto")
        }
    };
    println!("disparity range: [{}, {}] ({})", min_disp, max_disp, source);

    let foreground = threshold_foreground(&disparity, min_disp, max_disp)?;
    if foreground.is_empty() {
        return Err(coded(
            EXIT_DEGENERATE,
            format!(
                "no foreground pixels in disparity band [{}, {}]; adjust --min-disp/--max-disp",
                min_disp, max_disp
            ),
        ));
    }
    if args.k > foreground.len() {
        return Err(coded(
            EXIT_DEGENERATE,
            format!(
                "k={} exceeds the {} foreground pixels; widen the disparity band",
                args.k,
                foreground.len()
            ),
        ));
    }
    let medoids = kmedoids(&foreground, args.k)?;
    write_queries_csv(&args.out, &medoids)?;
    println!(
        "{} query points from {} foreground pixels -> {}",
        medoids.len(),
        foreground.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> anyhow::Result<()> {
    require_exists(&args.config, "compare config")?;
    let text = fs::read_to_string(&args.config)?;
    let config: CompareConfigFile = serde_json::from_str(&text).map_err(|e| {
        coded(EXIT_CONFIG, format!("bad compare config {}: {}", args.config.display(), e))
    })?;
    if config.runs.is_empty() {
        return Err(coded(EXIT_CONFIG, "compare config lists no runs"));
    }

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut curves = Vec::new();
    let mut reference_gt: Option<Vec<Vec<Point2>>> = None;
    for (i, run_args) in config.runs.iter().enumerate() {
        let run = prepare_run(run_args)?;
        let (positions, occluded) = run.gt.clone().ok_or_else(|| {
            coded(
                EXIT_CONFIG,
                format!("run {}: compare needs ground truth (--scene or --gt)", i),
            )
        })?;
        // Every run must score against the same scene.
        match &reference_gt {
            None => reference_gt = Some(positions.clone()),
            Some(reference) => {
                let same = reference.len() == positions.len()
                    && reference
                        .iter()
                        .zip(&positions)
                        .all(|(a, b)| a.len() == b.len() && a.iter().zip(b).all(|(p, q)| p == q));
                if !same {
                    return Err(coded(
                        EXIT_MISALIGNED,
                        format!("run {}: ground truth differs from run 0 — compare needs one scene", i),
                    ));
                }
            }
        }

        let (frames, step_seconds) = execute_run(&run)?;
        let trajectory = to_trajectory(&run.args, &frames);
        let report = score(
            &trajectory,
            &GroundTruthFile {
                version: GROUND_TRUTH_VERSION,
                positions,
                occluded,
            },
        )?;
        let (mean_ms, p95_ms) = latency_stats(&step_seconds);
        labels.push(
            run.args
                .label
                .clone()
                .unwrap_or_else(|| run.args.tracker.name().to_string()),
        );
        curves.push(report.mee_by_duration.clone());
        rows.push(CompareRow {
            label: labels.last().unwrap().clone(),
            tracker: run.args.tracker,
            backend: run.args.backend,
            mee_px: report.mee_px,
            mcd_px: report.mcd_px,
            delta_avg: report.delta_avg,
            latency_ms_mean: mean_ms,
            latency_ms_p95: p95_ms,
        });
    }

    println!(
        "{:<12} {:>10} {:>10} {:>10} {:>14} {:>13}",
        "tracker", "mee_px", "mcd_px", "delta_avg", "latency_ms", "latency_p95"
    );
    for row in &rows {
        println!(
            "{:<12} {:>10.4} {:>10.4} {:>10.4} {:>14.3} {:>13.3}",
            row.label, row.mee_px, row.mcd_px, row.delta_avg, row.latency_ms_mean, row.latency_ms_p95
        );
    }

    if let Some(curves_path) = &args.curves {
        write_curve_csv(curves_path, &labels, &curves)?;
    }
    let report = CompareReport {
        version: COMPARE_VERSION,
        rows,
    };
    if let Some(out) = &args.out {
        write_json(out, &report)?;
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Command::Track(args) => cmd_track(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Synth(args) => cmd_synth(args),
        Command::InitQueries(args) => cmd_init_queries(args),
        Command::Compare(args) => cmd_compare(args),
    };
    if let Err(err) = result {
        eprintln!("error: {:#}", err);
        std::process::exit(exit_code(&err));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_map_error_classes() {
        assert_eq!(exit_code(&coded(EXIT_MISSING, "x")), 3);
        assert_eq!(
            exit_code(&anyhow::Error::new(CoreError::DimensionMismatch("x".into()))),
            4
        );
        assert_eq!(
            exit_code(&anyhow::Error::new(CoreError::ConfigRejected {
                reason: "x".into()
            })),
            2
        );
        assert_eq!(
            exit_code(&anyhow::Error::new(CoreError::UndefinedMetric("x".into()))),
            5
        );
        assert_eq!(exit_code(&anyhow::anyhow!("anything else")), 1);
        // Codes survive context wrapping.
        let wrapped = coded(EXIT_DEGENERATE, "inner").context("outer");
        assert_eq!(exit_code(&wrapped), 5);
    }

    #[test]
    fn latency_stats_mean_and_p95() {
        let times: Vec<f64> = (1..=100).map(|i| i as f64 * 1e-3).collect();
        let (mean, p95) = latency_stats(&times);
        assert!((mean - 50.5).abs() < 1e-9);
        assert!((p95 - 95.0).abs() < 1e-9);
        assert_eq!(latency_stats(&[]), (0.0, 0.0));
    }

    #[test]
    fn run_args_round_trip_json() {
        let args = RunArgs {
            tracker: TrackerKind::Mfst,
            backend: BackendKind::OracleNoisy,
            tau: Some(1.5),
            ..RunArgs::default()
        };
        let text = serde_json::to_string(&args).unwrap();
        let back: RunArgs = serde_json::from_str(&text).unwrap();
        assert_eq!(back.tracker, TrackerKind::Mfst);
        assert_eq!(back.backend, BackendKind::OracleNoisy);
        assert_eq!(back.tau, Some(1.5));
        assert_eq!(back.intervals, DEFAULT_INTERVALS.to_vec());
        // Unknown fields are tolerated on read.
        let tolerant: RunArgs =
            serde_json::from_str(r#"{"tracker":"chain","future_knob":7}"#).unwrap();
        assert_eq!(tolerant.tracker, TrackerKind::Chain);
    }
}
