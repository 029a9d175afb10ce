//! Argument definitions, config-file handling, and execution for every
//! `actdet` subcommand.

use std::collections::BTreeSet;
use std::fmt::Display;
use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use actdet::anchors::{
    anchors_to_json, kmeans_anchors_restarts, parse_anchors_json, profile_to_csv, select_k,
    shape_samples, ShapeDistance, DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use actdet::annot::{
    annotations_to_jsonl, clips_to_jsonl, dataset_stats, filter_top_classes, parse_annotations,
    parse_labels, remap_to_csv, split_manifest_json, stats_to_csv, stratified_split, ClipRecord,
    FrameAnnotation,
};
use actdet::decode::{decode_grid, nms, read_grid};
use actdet::eval::{
    evaluate, parse_detections, report_summary_csv, report_to_csv, EvalConfig,
};
use actdet::imbalance::{
    effective_number_weights, inverted_effective_number_weights, weights_to_csv, ImbalanceParams,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// A failure plus the exit status it maps to: 1 for problems with the
/// invocation or its inputs, 2 for failures past validation (unwritable
/// outputs, broken pipes).
#[derive(Debug)]
pub enum CliError {
    Input(String),
    Internal(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Internal(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Input(msg) | CliError::Internal(msg) => msg,
        }
    }
}

impl From<actdet::Error> for CliError {
    // Toolkit errors all trace back to input data or parameters.
    fn from(err: actdet::Error) -> Self {
        CliError::Input(err.to_string())
    }
}

/// Action-detection toolkit: dataset statistics, class filtering,
/// stratified splitting, anchor clustering, class weighting, detector
/// evaluation, and grid decoding.
#[derive(Parser)]
#[command(name = "actdet", version)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-class clip and frame counts from an annotation file
    Stats(StatsArgs),
    /// Keep only classes with enough clips and densely re-index them
    Filter(FilterArgs),
    /// Deterministic stratified train/test split of annotated clips
    Split(SplitArgs),
    /// Cluster ground-truth box shapes into anchor boxes
    Anchors(AnchorsArgs),
    /// Effective-number class weights from annotation frequencies
    Weights(WeightsArgs),
    /// Score detections against ground truth (per-class AP, mAP,
    /// localization recall, classification accuracy)
    Eval(EvalArgs),
    /// Decode a raw detector grid into detections
    Decode(DecodeArgs),
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Stats(args) => run_stats(args),
        Command::Filter(args) => run_filter(args),
        Command::Split(args) => run_split(args),
        Command::Anchors(args) => run_anchors(args),
        Command::Weights(args) => run_weights(args),
        Command::Eval(args) => run_eval(args),
        Command::Decode(args) => run_decode(args),
    }
}

// ---------------------------------------------------------------------------
// Config files
// ---------------------------------------------------------------------------

/// Applies one pair from a `--config` file. Keys use the long-flag
/// spelling (`min-clips`, `k-max`, …); file values override flags.
trait ApplyConfig {
    fn apply(&mut self, key: &str, value: &str) -> Result<(), CliError>;
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| CliError::Input(format!("config key `{key}`: {e}")))
}

fn unknown_key(key: &str) -> CliError {
    CliError::Input(format!("unknown config key `{key}`"))
}

/// Reads a config file of `key = value` lines; `#` comments and blank
/// lines are skipped.
fn load_config(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let mut pairs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Input(format!(
                "{}:{}: expected `key = value`, got `{line}`",
                path.display(),
                lineno + 1
            )));
        };
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

/// Overlays the command's `--config` file (if any) onto already-parsed
/// flags, giving the file the last word.
fn apply_config<A: ApplyConfig>(args: &mut A, config: Option<PathBuf>) -> Result<(), CliError> {
    if let Some(path) = config {
        for (key, value) in load_config(&path)? {
            args.apply(&key, &value)?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// I/O plumbing
// ---------------------------------------------------------------------------

fn open_input(path: &Path) -> Result<BufReader<fs::File>, CliError> {
    fs::File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn read_annotations(path: &Path) -> Result<(Vec<FrameAnnotation>, Vec<ClipRecord>), CliError> {
    Ok(parse_annotations(open_input(path)?)?)
}

/// Writes `data` to `path`, or to standard output when no path is given.
fn emit(out: Option<&Path>, data: &str) -> Result<(), CliError> {
    match out {
        Some(path) => {
            fs::write(path, data)
                .map_err(|e| CliError::Internal(format!("{}: {e}", path.display())))?;
            eprintln!("wrote {}", path.display());
            Ok(())
        }
        None => io::stdout()
            .write_all(data.as_bytes())
            .map_err(|e| CliError::Internal(format!("stdout: {e}"))),
    }
}

// ---------------------------------------------------------------------------
// stats
// ---------------------------------------------------------------------------

#[derive(Args)]
struct StatsArgs {
    /// Annotation JSONL file
    #[arg(long, value_name = "FILE")]
    ann: PathBuf,
    /// JSON object mapping class id to label, for the CSV label column
    #[arg(long, value_name = "FILE")]
    labels: Option<PathBuf>,
    /// Output CSV path (standard output when omitted)
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// `key = value` file whose entries override the flags above
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

impl ApplyConfig for StatsArgs {
    fn apply(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "ann" => self.ann = parse_value(key, value)?,
            "labels" => self.labels = Some(parse_value(key, value)?),
            "out" => self.out = Some(parse_value(key, value)?),
            _ => return Err(unknown_key(key)),
        }
        Ok(())
    }
}

fn run_stats(mut args: StatsArgs) -> Result<(), CliError> {
    let config = args.config.take();
    apply_config(&mut args, config)?;
    let (_, clips) = read_annotations(&args.ann)?;
    let stats = dataset_stats(&clips);
    let labels = match &args.labels {
        Some(path) => Some(parse_labels(open_input(path)?)?),
        None => None,
    };
    eprintln!(
        "{} classes, {} clips, {} frames",
        stats.per_class.len(),
        stats.total_clips,
        stats.total_frames
    );
    emit(args.out.as_deref(), &stats_to_csv(&stats, labels.as_ref()))
}

// ---------------------------------------------------------------------------
// filter
// ---------------------------------------------------------------------------

#[derive(Args)]
struct FilterArgs {
    /// Annotation JSONL file
    #[arg(long, value_name = "FILE")]
    ann: PathBuf,
    /// Minimum clip count a class needs to survive (inclusive)
    #[arg(long, value_name = "N", default_value_t = 10)]
    min_clips: usize,
    /// Output path for the re-indexed annotation JSONL (standard output
    /// when omitted)
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Output CSV path for the new-to-old class id table
    #[arg(long, value_name = "FILE")]
    remap_out: Option<PathBuf>,
    /// `key = value` file whose entries override the flags above
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

impl ApplyConfig for FilterArgs {
    fn apply(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "ann" => self.ann = parse_value(key, value)?,
            "min-clips" => self.min_clips = parse_value(key, value)?,
            "out" => self.out = Some(parse_value(key, value)?),
            "remap-out" => self.remap_out = Some(parse_value(key, value)?),
            _ => return Err(unknown_key(key)),
        }
        Ok(())
    }
}

fn run_filter(mut args: FilterArgs) -> Result<(), CliError> {
    let config = args.config.take();
    apply_config(&mut args, config)?;
    let (frames, clips) = read_annotations(&args.ann)?;
    let before: BTreeSet<u32> = clips.iter().map(|c| c.class_id).collect();
    let (_, remap) = filter_top_classes(&clips, args.min_clips)?;
    eprintln!("{} of {} classes kept", remap.entries.len(), before.len());
    let filtered = remap.apply_to_annotations(&frames);
    emit(args.out.as_deref(), &annotations_to_jsonl(&filtered))?;
    if let Some(path) = &args.remap_out {
        emit(Some(path), &remap_to_csv(&remap))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// split
// ---------------------------------------------------------------------------

#[derive(Args)]
struct SplitArgs {
    /// Annotation JSONL file
    #[arg(long, value_name = "FILE")]
    ann: PathBuf,
    /// Train fraction, strictly between 0 and 1
    #[arg(long, default_value_t = 0.7)]
    ratio: f64,
    /// Seed for the per-class shuffles
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output JSONL path for the train clips
    #[arg(long, value_name = "FILE")]
    train_out: PathBuf,
    /// Output JSONL path for the test clips
    #[arg(long, value_name = "FILE")]
    test_out: PathBuf,
    /// Output path for the JSON manifest recording seed and ratio
    /// (standard output when omitted)
    #[arg(long, value_name = "FILE")]
    manifest_out: Option<PathBuf>,
    /// `key = value` file whose entries override the flags above
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

impl ApplyConfig for SplitArgs {
    fn apply(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "ann" => self.ann = parse_value(key, value)?,
            "ratio" => self.ratio = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "train-out" => self.train_out = parse_value(key, value)?,
            "test-out" => self.test_out = parse_value(key, value)?,
            "manifest-out" => self.manifest_out = Some(parse_value(key, value)?),
            _ => return Err(unknown_key(key)),
        }
        Ok(())
    }
}

fn run_split(mut args: SplitArgs) -> Result<(), CliError> {
    let config = args.config.take();
    apply_config(&mut args, config)?;
    let (_, clips) = read_annotations(&args.ann)?;
    let split = stratified_split(&clips, args.ratio, args.seed)?;
    eprintln!(
        "split {} clips into {} train / {} test",
        clips.len(),
        split.train.len(),
        split.test.len()
    );
    emit(Some(&args.train_out), &clips_to_jsonl(&split.train))?;
    emit(Some(&args.test_out), &clips_to_jsonl(&split.test))?;
    emit(args.manifest_out.as_deref(), &split_manifest_json(&split))
}

// ---------------------------------------------------------------------------
// anchors
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DistanceArg {
    /// Squared Euclidean distance on normalized (w, h)
    Euclidean,
    /// 1 − IoU of the shapes placed at a common center
    Iou,
}

#[derive(Args)]
struct AnchorsArgs {
    /// Annotation JSONL file supplying ground-truth box shapes
    #[arg(long, value_name = "FILE")]
    ann: PathBuf,
    /// Number of anchors (fixed-k mode)
    #[arg(long, value_name = "K")]
    k: Option<usize>,
    /// Smallest k to profile (range mode; needs --k-max)
    #[arg(long, value_name = "K")]
    k_min: Option<usize>,
    /// Largest k to profile (range mode; needs --k-min)
    #[arg(long, value_name = "K")]
    k_max: Option<usize>,
    /// Seed for centroid initialization
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Clustering distance (fixed-k mode; range mode is always euclidean)
    #[arg(long, value_enum, default_value_t = DistanceArg::Euclidean)]
    distance: DistanceArg,
    /// Independent restarts, keeping the lowest-inertia run (fixed-k mode)
    #[arg(long, value_name = "N", default_value_t = 1)]
    restarts: usize,
    /// Relative inertia improvement below which iteration stops
    /// (fixed-k mode)
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    /// Iteration cap (fixed-k mode)
    #[arg(long, value_name = "N", default_value_t = DEFAULT_MAX_ITER)]
    max_iter: usize,
    /// Image width for normalizing box shapes (largest x_max in the
    /// annotations when omitted)
    #[arg(long, value_name = "PX")]
    image_width: Option<f64>,
    /// Image height for normalizing box shapes (largest y_max in the
    /// annotations when omitted)
    #[arg(long, value_name = "PX")]
    image_height: Option<f64>,
    /// Output JSON path for the anchor set (standard output when omitted)
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Output CSV path for the (k, inertia) profile (range mode only)
    #[arg(long, value_name = "FILE")]
    profile_out: Option<PathBuf>,
    /// `key = value` file whose entries override the flags above
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

impl ApplyConfig for AnchorsArgs {
    fn apply(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "ann" => self.ann = parse_value(key, value)?,
            "k" => self.k = Some(parse_value(key, value)?),
            "k-min" => self.k_min = Some(parse_value(key, value)?),
            "k-max" => self.k_max = Some(parse_value(key, value)?),
            "seed" => self.seed = parse_value(key, value)?,
            "distance" => {
                self.distance = DistanceArg::from_str(value, true)
                    .map_err(|e| CliError::Input(format!("config key `{key}`: {e}")))?
            }
            "restarts" => self.restarts = parse_value(key, value)?,
            "tol" => self.tol = parse_value(key, value)?,
            "max-iter" => self.max_iter = parse_value(key, value)?,
            "image-width" => self.image_width = Some(parse_value(key, value)?),
            "image-height" => self.image_height = Some(parse_value(key, value)?),
            "out" => self.out = Some(parse_value(key, value)?),
            "profile-out" => self.profile_out = Some(parse_value(key, value)?),
            _ => return Err(unknown_key(key)),
        }
        Ok(())
    }
}

fn run_anchors(mut args: AnchorsArgs) -> Result<(), CliError> {
    let config = args.config.take();
    apply_config(&mut args, config)?;
    // Mode validation happens after the config overlay so either source
    // can select the mode.
    let fixed = args.k.is_some();
    let range = args.k_min.is_some() || args.k_max.is_some();
    if fixed && range {
        return Err(CliError::Input(
            "--k conflicts with --k-min/--k-max".to_string(),
        ));
    }
    if range && (args.k_min.is_none() || args.k_max.is_none()) {
        return Err(CliError::Input(
            "--k-min and --k-max must be given together".to_string(),
        ));
    }
    if !fixed && !range {
        return Err(CliError::Input(
            "one of --k or --k-min/--k-max is required".to_string(),
        ));
    }
    if args.profile_out.is_some() && fixed {
        return Err(CliError::Input(
            "--profile-out requires --k-min/--k-max".to_string(),
        ));
    }
    if args.distance == DistanceArg::Iou && range {
        return Err(CliError::Input(
            "k selection runs on the squared-Euclidean objective; use --k with --distance iou"
                .to_string(),
        ));
    }

    let (frames, _) = read_annotations(&args.ann)?;
    let (max_x, max_y) = frames
        .iter()
        .flat_map(|f| &f.boxes)
        .fold((0.0f64, 0.0f64), |(mx, my), b| {
            (mx.max(b.bbox.x_max()), my.max(b.bbox.y_max()))
        });
    if args.image_width.is_none() || args.image_height.is_none() {
        if !(max_x > 0.0 && max_y > 0.0) {
            return Err(CliError::Input(
                "annotations contain no boxes; give --image-width/--image-height or add boxes"
                    .to_string(),
            ));
        }
        eprintln!("normalizing shapes by inferred image extent {max_x} x {max_y}");
    }
    let image_w = args.image_width.unwrap_or(max_x);
    let image_h = args.image_height.unwrap_or(max_y);
    let samples = shape_samples(&frames, image_w, image_h)?;
    eprintln!("clustering {} box shapes", samples.len());

    if let Some(k) = args.k {
        let metric = match args.distance {
            DistanceArg::Euclidean => ShapeDistance::SquaredEuclidean,
            DistanceArg::Iou => ShapeDistance::OneMinusIou,
        };
        let set = kmeans_anchors_restarts(
            &samples,
            k,
            args.seed,
            args.tol,
            args.max_iter,
            metric,
            args.restarts,
        )?;
        emit(args.out.as_deref(), &anchors_to_json(&set))
    } else {
        let selection = select_k(&samples, args.k_min.unwrap(), args.k_max.unwrap(), args.seed)?;
        eprintln!("elbow rule chose k = {}", selection.chosen_k);
        emit(args.out.as_deref(), &anchors_to_json(&selection.anchors))?;
        if let Some(path) = &args.profile_out {
            emit(Some(path), &profile_to_csv(&selection.profile))?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// weights
// ---------------------------------------------------------------------------

#[derive(Args)]
struct WeightsArgs {
    /// Annotation JSONL file supplying per-class frame counts
    #[arg(long, value_name = "FILE")]
    ann: PathBuf,
    /// Focal exponent recorded with the weights
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    /// Effective-number decay, in [0, 1)
    #[arg(long, default_value_t = 0.7)]
    beta: f64,
    /// Emit the reciprocal form (1 − β)/(1 − β^n), which down-weights
    /// frequent classes
    #[arg(long)]
    invert_enf: bool,
    /// Output CSV path (standard output when omitted)
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// `key = value` file whose entries override the flags above
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

impl ApplyConfig for WeightsArgs {
    fn apply(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "ann" => self.ann = parse_value(key, value)?,
            "alpha" => self.alpha = parse_value(key, value)?,
            "beta" => self.beta = parse_value(key, value)?,
            "invert-enf" => self.invert_enf = parse_value(key, value)?,
            "out" => self.out = Some(parse_value(key, value)?),
            _ => return Err(unknown_key(key)),
        }
        Ok(())
    }
}

fn run_weights(mut args: WeightsArgs) -> Result<(), CliError> {
    let config = args.config.take();
    apply_config(&mut args, config)?;
    let (_, clips) = read_annotations(&args.ann)?;
    let stats = dataset_stats(&clips);
    let params = ImbalanceParams::new(args.alpha, args.beta)?;
    let counts: Vec<(u32, u64)> = stats
        .per_class
        .iter()
        .map(|c| (c.class_id, c.frame_count))
        .collect();
    let weights = if args.invert_enf {
        inverted_effective_number_weights(&counts, params)
    } else {
        effective_number_weights(&counts, params)
    };
    emit(args.out.as_deref(), &weights_to_csv(&weights))
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReportArg {
    /// Per-class AP table followed by the summary row
    Table3,
    /// Summary row only (map, loc_recall, cls_acc)
    Summary,
}

#[derive(Args)]
struct EvalArgs {
    /// Ground-truth annotation JSONL file
    #[arg(long, value_name = "FILE")]
    ann: PathBuf,
    /// Detection JSONL file
    #[arg(long, value_name = "FILE")]
    det: PathBuf,
    /// IoU a detection must reach on a same-class ground-truth box
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    /// Drop detections below this confidence before matching
    #[arg(long, default_value_t = 0.0)]
    conf_floor: f64,
    /// Fixed class-space size (inferred from the data when omitted)
    #[arg(long, value_name = "N")]
    num_classes: Option<u32>,
    /// Match frames on a thread pool (the report is byte-identical)
    #[arg(long)]
    parallel: bool,
    /// Report layout
    #[arg(long, value_enum, default_value_t = ReportArg::Table3)]
    report: ReportArg,
    /// Output CSV path (standard output when omitted)
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// `key = value` file whose entries override the flags above
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

impl ApplyConfig for EvalArgs {
    fn apply(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "ann" => self.ann = parse_value(key, value)?,
            "det" => self.det = parse_value(key, value)?,
            "iou" => self.iou = parse_value(key, value)?,
            "conf-floor" => self.conf_floor = parse_value(key, value)?,
            "num-classes" => self.num_classes = Some(parse_value(key, value)?),
            "parallel" => self.parallel = parse_value(key, value)?,
            "report" => {
                self.report = ReportArg::from_str(value, true)
                    .map_err(|e| CliError::Input(format!("config key `{key}`: {e}")))?
            }
            "out" => self.out = Some(parse_value(key, value)?),
            _ => return Err(unknown_key(key)),
        }
        Ok(())
    }
}

fn run_eval(mut args: EvalArgs) -> Result<(), CliError> {
    let config = args.config.take();
    apply_config(&mut args, config)?;
    let (frames, _) = read_annotations(&args.ann)?;
    let detections = parse_detections(open_input(&args.det)?)?;
    let config = EvalConfig {
        iou_threshold: args.iou,
        conf_floor: args.conf_floor,
        num_classes: args.num_classes,
        parallel: args.parallel,
    };
    let report = evaluate(&frames, &detections, &config)?;
    eprintln!(
        "{} frames, {} ground-truth boxes, {} detections",
        report.total_frames, report.total_gt, report.total_detections
    );
    let csv = match args.report {
        ReportArg::Table3 => report_to_csv(&report),
        ReportArg::Summary => report_summary_csv(&report),
    };
    emit(args.out.as_deref(), &csv)
}

// ---------------------------------------------------------------------------
// decode
// ---------------------------------------------------------------------------

#[derive(Args)]
struct DecodeArgs {
    /// Raw detector grid (binary)
    #[arg(long, value_name = "FILE")]
    grid: PathBuf,
    /// Anchor-set JSON as produced by `anchors`
    #[arg(long, value_name = "FILE")]
    anchors: PathBuf,
    /// Image width in pixels
    #[arg(long, value_name = "PX")]
    image_width: f64,
    /// Image height in pixels
    #[arg(long, value_name = "PX")]
    image_height: f64,
    /// Drop decoded detections below this confidence
    #[arg(long, default_value_t = 0.0)]
    conf_floor: f64,
    /// Video id stamped on the decoded detections
    #[arg(long, default_value = "video")]
    video_id: String,
    /// Frame index stamped on the decoded detections
    #[arg(long, default_value_t = 0)]
    frame: u32,
    /// Apply per-class non-maximum suppression after decoding
    #[arg(long)]
    nms: bool,
    /// IoU threshold above which --nms suppresses an overlapping detection
    #[arg(long, default_value_t = 0.45)]
    nms_iou: f64,
    /// Output JSONL path (standard output when omitted)
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// `key = value` file whose entries override the flags above
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

impl ApplyConfig for DecodeArgs {
    fn apply(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "grid" => self.grid = parse_value(key, value)?,
            "anchors" => self.anchors = parse_value(key, value)?,
            "image-width" => self.image_width = parse_value(key, value)?,
            "image-height" => self.image_height = parse_value(key, value)?,
            "conf-floor" => self.conf_floor = parse_value(key, value)?,
            "video-id" => self.video_id = value.to_string(),
            "frame" => self.frame = parse_value(key, value)?,
            "nms" => self.nms = parse_value(key, value)?,
            "nms-iou" => self.nms_iou = parse_value(key, value)?,
            "out" => self.out = Some(parse_value(key, value)?),
            _ => return Err(unknown_key(key)),
        }
        Ok(())
    }
}

fn run_decode(mut args: DecodeArgs) -> Result<(), CliError> {
    let config = args.config.take();
    apply_config(&mut args, config)?;
    let grid = read_grid(&mut open_input(&args.grid)?)?;
    let anchor_set = parse_anchors_json(open_input(&args.anchors)?)?;
    let mut detections = decode_grid(
        &grid,
        &anchor_set,
        args.image_width,
        args.image_height,
        args.conf_floor,
        &args.video_id,
        args.frame,
    )?;
    if args.nms {
        detections = nms(&detections, args.nms_iou)?;
    }
    eprintln!("{} detections", detections.len());
    emit(args.out.as_deref(), &actdet::eval::detections_to_jsonl(&detections))
}
