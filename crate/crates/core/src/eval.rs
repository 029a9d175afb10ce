//! Detection-to-ground-truth matching and frame-level metrics: per-class
//! average precision, frame-mAP, localization recall, and classification
//! accuracy.
//!
//! A detection is a true positive when it overlaps a not-yet-matched
//! ground-truth box of the same class with IoU at or above the threshold;
//! matching is greedy in descending confidence. Per-class AP is the
//! all-point interpolated area under the precision-recall curve built from
//! detections pooled across every frame, and frame-mAP averages AP over the
//! classes that have at least one ground-truth box.
//!
//! Undefined quantities (AP of a class with no ground truth, accuracy with
//! no matches) are reported as NaN and excluded from aggregate means.

use std::collections::BTreeMap;
use std::io::BufRead;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annot::{FrameAnnotation, GroundTruthBox};
use crate::error::{Error, Result};
use crate::geom::{iou, BBox};

/// One detector output box with its confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub video_id: String,
    pub frame_index: u32,
    pub class_id: u32,
    pub confidence: f64,
    pub bbox: BBox,
}

impl Detection {
    /// Validates that `confidence` is finite and within `[0, 1]`.
    pub fn new(
        video_id: impl Into<String>,
        frame_index: u32,
        class_id: u32,
        confidence: f64,
        bbox: BBox,
    ) -> Result<Self> {
        if !confidence.is_finite() || !(0.0..=1.0).contains(&confidence) {
            return Err(Error::InvalidParam(format!(
                "confidence must be in [0, 1], got {confidence}"
            )));
        }
        Ok(Detection {
            video_id: video_id.into(),
            frame_index,
            class_id,
            confidence,
            bbox,
        })
    }
}

/// Match verdict for one detection, in the detection's input position.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchOutcome {
    pub is_tp: bool,
    /// Index into the ground-truth list for a TP; `None` for an FP.
    pub matched_gt: Option<usize>,
    /// IoU with the matched box for a TP; for an FP, the best IoU against
    /// any same-class ground-truth box (0 when there is none).
    pub iou: f64,
}

/// One point of a precision-recall curve, at a given detection rank.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PRPoint {
    pub recall: f64,
    pub precision: f64,
}

/// Precision-recall points in rank order, plus the ground-truth count the
/// recalls are normalized by. Recall is non-decreasing along `points`.
#[derive(Debug, Clone, PartialEq)]
pub struct PRCurve {
    pub points: Vec<PRPoint>,
    pub total_gt: usize,
}

/// Per-class evaluation row.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassEval {
    pub class_id: u32,
    /// NaN when the class has no ground-truth boxes.
    pub average_precision: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub total_gt: usize,
}

/// Full evaluation output over a detection set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// One row per class id in ascending order.
    pub per_class: Vec<ClassEval>,
    /// Mean AP over classes with ground truth; NaN when no class has any.
    pub mean_average_precision: f64,
    /// Fraction of ground-truth boxes matched class-agnostically; NaN when
    /// there is no ground truth at all.
    pub localization_recall: f64,
    /// Label agreement among class-agnostic matches; NaN when nothing
    /// matched.
    pub classification_accuracy: f64,
    pub iou_threshold: f64,
    pub total_frames: usize,
    pub total_gt: usize,
    pub total_detections: usize,
}

/// Evaluation parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    /// TP threshold on IoU, in `(0, 1]`.
    pub iou_threshold: f64,
    /// Detections below this confidence are dropped before matching.
    pub conf_floor: f64,
    /// Fixed class-space size; detections or ground truth outside
    /// `0..num_classes` are an error. `None` infers the size from the data.
    pub num_classes: Option<u32>,
    /// Process frames on a thread pool. Output is byte-identical either way.
    pub parallel: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_threshold: 0.5,
            conf_floor: 0.0,
            num_classes: None,
            parallel: false,
        }
    }
}

/// Greedy core shared by the class-aware and class-agnostic passes.
///
/// Detections are visited in descending confidence (ties keep input order);
/// each takes the highest-IoU unmatched candidate at or above the threshold,
/// ties going to the lowest ground-truth index. Returns the matched
/// ground-truth index per detection, aligned to input order.
fn greedy_assign(
    gt: &[GroundTruthBox],
    dets: &[&Detection],
    iou_threshold: f64,
    class_aware: bool,
) -> Vec<Option<usize>> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .confidence
            .partial_cmp(&dets[a].confidence)
            .expect("confidences are finite")
            .then(a.cmp(&b))
    });

    let mut gt_taken = vec![false; gt.len()];
    let mut assigned = vec![None; dets.len()];
    for det_idx in order {
        let det = dets[det_idx];
        let mut best: Option<(usize, f64)> = None;
        for (gt_idx, truth) in gt.iter().enumerate() {
            if gt_taken[gt_idx] || (class_aware && truth.class_id != det.class_id) {
                continue;
            }
            let overlap = iou(&truth.bbox, &det.bbox);
            if overlap < iou_threshold {
                continue;
            }
            let better = match best {
                None => true,
                Some((_, best_iou)) => overlap > best_iou,
            };
            if better {
                best = Some((gt_idx, overlap));
            }
        }
        if let Some((gt_idx, _)) = best {
            gt_taken[gt_idx] = true;
            assigned[det_idx] = Some(gt_idx);
        }
    }
    assigned
}

/// Matches one frame's detections against its ground truth, class-aware.
///
/// All detections must carry the same `(video_id, frame_index)`. The result
/// is aligned to the detection input order.
pub fn match_frame(
    gt: &[GroundTruthBox],
    dets: &[Detection],
    iou_threshold: f64,
) -> Result<Vec<MatchOutcome>> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(Error::InvalidParam(format!(
            "iou_threshold must be in (0, 1], got {iou_threshold}"
        )));
    }
    if let Some(first) = dets.first() {
        for d in &dets[1..] {
            if d.video_id != first.video_id || d.frame_index != first.frame_index {
                return Err(Error::MixedFrames(format!(
                    "detections span ({}, {}) and ({}, {})",
                    first.video_id, first.frame_index, d.video_id, d.frame_index
                )));
            }
        }
    }
    let refs: Vec<&Detection> = dets.iter().collect();
    let assigned = greedy_assign(gt, &refs, iou_threshold, true);
    Ok(assigned
        .into_iter()
        .zip(dets)
        .map(|(matched_gt, det)| {
            let iou_value = match matched_gt {
                Some(gt_idx) => iou(&gt[gt_idx].bbox, &det.bbox),
                None => gt
                    .iter()
                    .filter(|t| t.class_id == det.class_id)
                    .map(|t| iou(&t.bbox, &det.bbox))
                    .fold(0.0, f64::max),
            };
            MatchOutcome {
                is_tp: matched_gt.is_some(),
                matched_gt,
                iou: iou_value,
            }
        })
        .collect())
}

/// Builds the precision-recall curve from rank-ordered `(confidence, is_tp)`
/// flags. Point `k` (1-based) has precision `TP@k / k` and recall
/// `TP@k / total_gt`; a zero `total_gt` yields an empty curve.
pub fn pr_curve(flags: &[(f64, bool)], total_gt: usize) -> Result<PRCurve> {
    for (i, pair) in flags.windows(2).enumerate() {
        if pair[1].0 > pair[0].0 {
            return Err(Error::UnsortedConfidences { index: i + 1 });
        }
    }
    let tp_total = flags.iter().filter(|f| f.1).count();
    if tp_total > total_gt {
        return Err(Error::ExcessTruePositives { index: tp_total });
    }
    if total_gt == 0 {
        return Ok(PRCurve {
            points: Vec::new(),
            total_gt,
        });
    }
    let mut points = Vec::with_capacity(flags.len());
    let mut tp = 0usize;
    for (k, &(_, is_tp)) in flags.iter().enumerate() {
        if is_tp {
            tp += 1;
        }
        points.push(PRPoint {
            recall: tp as f64 / total_gt as f64,
            precision: tp as f64 / (k + 1) as f64,
        });
    }
    Ok(PRCurve { points, total_gt })
}

/// All-point interpolated average precision: the integral over
/// `[0, max recall]` of the precision envelope `p̃(r) = max{precision at
/// points with recall ≥ r}`. An empty curve has AP 0.
pub fn average_precision(curve: &PRCurve) -> f64 {
    let points = &curve.points;
    if points.is_empty() {
        return 0.0;
    }
    // Envelope at point i = max precision over points i..; the integral
    // advances only where recall steps up.
    let mut envelope = vec![0.0f64; points.len()];
    let mut running = 0.0f64;
    for i in (0..points.len()).rev() {
        running = running.max(points[i].precision);
        envelope[i] = running;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (i, point) in points.iter().enumerate() {
        if point.recall > prev_recall {
            ap += (point.recall - prev_recall) * envelope[i];
            prev_recall = point.recall;
        }
    }
    ap
}

/// Per-frame work item: ground truth plus detections with their input ranks.
struct FrameTask<'a> {
    gt: Vec<&'a GroundTruthBox>,
    dets: Vec<(usize, &'a Detection)>,
}

/// Per-frame partial result, merged serially in frame order.
struct FrameOutcome {
    /// (class_id, confidence, input rank, is_tp) per detection.
    flags: Vec<(u32, f64, usize, bool)>,
    agnostic_matched: usize,
    agnostic_label_hits: usize,
}

/// Runs the full evaluation: per-class AP over pooled flags, frame-mAP,
/// localization recall, and classification accuracy.
///
/// Frames may be processed in parallel (`config.parallel`); partial results
/// are merged in `(video_id, frame_index)` order and pooled flags are sorted
/// by descending confidence with ties broken by that frame order and then by
/// detection input order, so the report is identical either way.
pub fn evaluate(
    annotations: &[FrameAnnotation],
    detections: &[Detection],
    config: &EvalConfig,
) -> Result<EvalReport> {
    if !(config.iou_threshold > 0.0 && config.iou_threshold <= 1.0) {
        return Err(Error::InvalidParam(format!(
            "iou_threshold must be in (0, 1], got {}",
            config.iou_threshold
        )));
    }
    if !config.conf_floor.is_finite() || !(0.0..=1.0).contains(&config.conf_floor) {
        return Err(Error::InvalidParam(format!(
            "conf_floor must be in [0, 1], got {}",
            config.conf_floor
        )));
    }

    let kept: Vec<&Detection> = detections
        .iter()
        .filter(|d| d.confidence >= config.conf_floor)
        .collect();

    let num_classes = match config.num_classes {
        Some(c) => {
            for d in &kept {
                if d.class_id >= c {
                    return Err(Error::UnknownClass {
                        class_id: d.class_id,
                    });
                }
            }
            for frame in annotations {
                for b in &frame.boxes {
                    if b.class_id >= c {
                        return Err(Error::UnknownClass {
                            class_id: b.class_id,
                        });
                    }
                }
            }
            c
        }
        None => {
            let max_gt = annotations
                .iter()
                .flat_map(|f| f.boxes.iter().map(|b| b.class_id))
                .max();
            let max_det = kept.iter().map(|d| d.class_id).max();
            match max_gt.into_iter().chain(max_det).max() {
                Some(m) => m + 1,
                None => 0,
            }
        }
    };

    // Assemble per-frame tasks over the union of annotated frames and frames
    // that only appear in detections (those have empty ground truth).
    let mut frames: BTreeMap<(&str, u32), FrameTask> = BTreeMap::new();
    for frame in annotations {
        let task = frames
            .entry((frame.video_id.as_str(), frame.frame_index))
            .or_insert_with(|| FrameTask {
                gt: Vec::new(),
                dets: Vec::new(),
            });
        task.gt.extend(frame.boxes.iter());
    }
    for (rank, det) in kept.iter().enumerate() {
        frames
            .entry((det.video_id.as_str(), det.frame_index))
            .or_insert_with(|| FrameTask {
                gt: Vec::new(),
                dets: Vec::new(),
            })
            .dets
            .push((rank, det));
    }

    let total_frames = frames.len();
    let mut gt_per_class = vec![0usize; num_classes as usize];
    for task in frames.values() {
        for b in &task.gt {
            gt_per_class[b.class_id as usize] += 1;
        }
    }
    let total_gt: usize = gt_per_class.iter().sum();

    let per_frame = |task: &FrameTask| -> FrameOutcome {
        let gt: Vec<GroundTruthBox> = task.gt.iter().map(|b| (*b).clone()).collect();
        let dets: Vec<&Detection> = task.dets.iter().map(|(_, d)| *d).collect();
        let aware = greedy_assign(&gt, &dets, config.iou_threshold, true);
        let agnostic = greedy_assign(&gt, &dets, config.iou_threshold, false);
        let flags = task
            .dets
            .iter()
            .zip(&aware)
            .map(|(&(rank, det), matched)| {
                (det.class_id, det.confidence, rank, matched.is_some())
            })
            .collect();
        let agnostic_matched = agnostic.iter().filter(|m| m.is_some()).count();
        let agnostic_label_hits = agnostic
            .iter()
            .zip(&dets)
            .filter_map(|(matched, det)| matched.map(|gt_idx| (gt_idx, det)))
            .filter(|&(gt_idx, det)| gt[gt_idx].class_id == det.class_id)
            .count();
        FrameOutcome {
            flags,
            agnostic_matched,
            agnostic_label_hits,
        }
    };

    let tasks: Vec<&FrameTask> = frames.values().collect();
    let outcomes: Vec<FrameOutcome> = if config.parallel {
        tasks.par_iter().map(|t| per_frame(t)).collect()
    } else {
        tasks.iter().map(|t| per_frame(t)).collect()
    };

    // Pool flags per class. The sequence number encodes the stable
    // (video_id, frame_index, input rank) merge order used for tie-breaking.
    let mut pooled: Vec<Vec<(f64, usize, bool)>> = vec![Vec::new(); num_classes as usize];
    let mut agnostic_matched = 0usize;
    let mut agnostic_label_hits = 0usize;
    let mut seq = 0usize;
    for outcome in &outcomes {
        for &(class_id, conf, _rank, is_tp) in &outcome.flags {
            pooled[class_id as usize].push((conf, seq, is_tp));
            seq += 1;
        }
        agnostic_matched += outcome.agnostic_matched;
        agnostic_label_hits += outcome.agnostic_label_hits;
    }

    let mut per_class = Vec::with_capacity(num_classes as usize);
    let mut ap_sum = 0.0;
    let mut classes_with_gt = 0usize;
    for (class_id, class_flags) in pooled.iter_mut().enumerate() {
        class_flags.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .expect("confidences are finite")
                .then(a.1.cmp(&b.1))
        });
        let ranked: Vec<(f64, bool)> = class_flags.iter().map(|&(c, _, tp)| (c, tp)).collect();
        let gt_count = gt_per_class[class_id];
        let tp = ranked.iter().filter(|f| f.1).count();
        let fp = ranked.len() - tp;
        let ap = if gt_count == 0 {
            f64::NAN
        } else {
            let curve = pr_curve(&ranked, gt_count)?;
            let ap = average_precision(&curve);
            ap_sum += ap;
            classes_with_gt += 1;
            ap
        };
        per_class.push(ClassEval {
            class_id: class_id as u32,
            average_precision: ap,
            true_positives: tp,
            false_positives: fp,
            total_gt: gt_count,
        });
    }

    let mean_average_precision = if classes_with_gt == 0 {
        f64::NAN
    } else {
        ap_sum / classes_with_gt as f64
    };
    let localization_recall = if total_gt == 0 {
        f64::NAN
    } else {
        agnostic_matched as f64 / total_gt as f64
    };
    let classification_accuracy = if agnostic_matched == 0 {
        f64::NAN
    } else {
        agnostic_label_hits as f64 / agnostic_matched as f64
    };

    Ok(EvalReport {
        per_class,
        mean_average_precision,
        localization_recall,
        classification_accuracy,
        iou_threshold: config.iou_threshold,
        total_frames,
        total_gt,
        total_detections: kept.len(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct WireDetection {
    video_id: String,
    frame: u32,
    class: u32,
    conf: f64,
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

/// Parses detection JSONL, one detection per line. Blank lines are skipped;
/// malformed lines, invalid boxes, and out-of-range confidences report the
/// 1-based line number.
pub fn parse_detections(reader: impl BufRead) -> Result<Vec<Detection>> {
    let mut dets = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let wire: WireDetection = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            reason: e.to_string(),
        })?;
        let bbox = BBox::new(wire.x_min, wire.y_min, wire.x_max, wire.y_max).map_err(|e| {
            Error::Parse {
                line: line_no,
                reason: e.to_string(),
            }
        })?;
        let det = Detection::new(wire.video_id, wire.frame, wire.class, wire.conf, bbox)
            .map_err(|e| Error::Parse {
                line: line_no,
                reason: e.to_string(),
            })?;
        dets.push(det);
    }
    Ok(dets)
}

/// Serializes detections to JSONL in input order.
pub fn detections_to_jsonl(dets: &[Detection]) -> String {
    let mut out = String::new();
    for det in dets {
        let wire = WireDetection {
            video_id: det.video_id.clone(),
            frame: det.frame_index,
            class: det.class_id,
            conf: det.confidence,
            x_min: det.bbox.x_min(),
            y_min: det.bbox.y_min(),
            x_max: det.bbox.x_max(),
            y_max: det.bbox.y_max(),
        };
        out.push_str(&serde_json::to_string(&wire).expect("detection serializes"));
        out.push('\n');
    }
    out
}

fn percent_cell(value: f64) -> String {
    if value.is_nan() {
        "NaN".to_string()
    } else {
        format!("{:.4}", value * 100.0)
    }
}

/// Renders the per-class AP table (`action_index,ap_percent`, 1-based index)
/// followed by one summary row carrying map, loc_recall, and cls_acc, all as
/// percentages.
pub fn report_to_csv(report: &EvalReport) -> String {
    let mut out = String::from("action_index,ap_percent\n");
    for row in &report.per_class {
        out.push_str(&format!(
            "{},{}\n",
            row.class_id + 1,
            percent_cell(row.average_precision)
        ));
    }
    out.push_str(&report_summary_csv(report));
    out
}

/// Just the summary row of [`report_to_csv`]: one self-describing line with
/// map, loc_recall, and cls_acc as percentages.
pub fn report_summary_csv(report: &EvalReport) -> String {
    format!(
        "map,{},loc_recall,{},cls_acc,{}\n",
        percent_cell(report.mean_average_precision),
        percent_cell(report.localization_recall),
        percent_cell(report.classification_accuracy)
    )
}
