//! Annotation data model: JSONL ingestion, clip reconstruction, dataset
//! statistics, class filtering, and the constrained stratified split.
//!
//! The canonical annotation format is JSONL, one frame per line:
//!
//! ```text
//! {"video_id": "v1", "frame": 0, "boxes": [{"class": 3, "x_min": 10.0, "y_min": 5.0, "x_max": 40.0, "y_max": 25.0}]}
//! ```
//!
//! An empty `boxes` list is legal. A *clip* is a maximal run of consecutive
//! frame indices within one video in which a class has at least one box;
//! clips are the unit counted by [`dataset_stats`] and split by
//! [`stratified_split`].

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::BufRead;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::BBox;

/// One labeled box in a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthBox {
    pub class_id: u32,
    pub bbox: BBox,
}

/// All ground truth for one frame of one video. `boxes` may be empty.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameAnnotation {
    pub video_id: String,
    pub frame_index: u32,
    pub boxes: Vec<GroundTruthBox>,
}

/// A contiguous run of frames in one video carrying one action label.
/// `frame_span` is the inclusive `[start, end]` range.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct ClipRecord {
    pub video_id: String,
    pub class_id: u32,
    pub start: u32,
    pub end: u32,
}

impl ClipRecord {
    pub fn frame_count(&self) -> u64 {
        (self.end - self.start + 1) as u64
    }
}

/// Per-class clip and frame counts for one class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassStats {
    pub class_id: u32,
    pub clip_count: usize,
    pub frame_count: u64,
}

/// Dataset distribution, ordered by descending clip count (ties broken by
/// ascending class id).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetStats {
    pub per_class: Vec<ClassStats>,
    pub total_clips: usize,
    pub total_frames: u64,
}

/// Mapping from original class ids to the dense ids assigned by
/// [`filter_top_classes`], in new-id order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassRemap {
    pub entries: Vec<RemapEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemapEntry {
    pub old_id: u32,
    pub new_id: u32,
    pub clip_count: usize,
}

impl ClassRemap {
    pub fn new_id(&self, old_id: u32) -> Option<u32> {
        self.entries
            .iter()
            .find(|e| e.old_id == old_id)
            .map(|e| e.new_id)
    }

    /// Rewrites annotations under this remap: boxes of dropped classes are
    /// removed (frames are kept, possibly with an empty box list) and
    /// surviving boxes get their dense id.
    pub fn apply_to_annotations(&self, annotations: &[FrameAnnotation]) -> Vec<FrameAnnotation> {
        annotations
            .iter()
            .map(|frame| FrameAnnotation {
                video_id: frame.video_id.clone(),
                frame_index: frame.frame_index,
                boxes: frame
                    .boxes
                    .iter()
                    .filter_map(|b| {
                        self.new_id(b.class_id).map(|id| GroundTruthBox {
                            class_id: id,
                            bbox: b.bbox,
                        })
                    })
                    .collect(),
            })
            .collect()
    }
}

/// Disjoint train/test partition of a clip set.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitResult {
    pub train: Vec<ClipRecord>,
    pub test: Vec<ClipRecord>,
    pub seed: u64,
    pub ratio: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct WireBox {
    class: u32,
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct WireFrame {
    video_id: String,
    frame: u32,
    boxes: Vec<WireBox>,
}

/// Parses annotation JSONL. Returns the frames in input order together with
/// the clips reconstructed from them.
///
/// Blank lines are skipped. A malformed line, an invalid box, or a repeated
/// `(video_id, frame)` pair is an error; the first two carry the offending
/// 1-based line number.
pub fn parse_annotations(
    reader: impl BufRead,
) -> Result<(Vec<FrameAnnotation>, Vec<ClipRecord>)> {
    let mut frames = Vec::new();
    let mut seen: HashSet<(String, u32)> = HashSet::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let wire: WireFrame = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            reason: e.to_string(),
        })?;
        let mut boxes = Vec::with_capacity(wire.boxes.len());
        for wb in wire.boxes {
            let bbox =
                BBox::new(wb.x_min, wb.y_min, wb.x_max, wb.y_max).map_err(|e| Error::Parse {
                    line: line_no,
                    reason: e.to_string(),
                })?;
            boxes.push(GroundTruthBox {
                class_id: wb.class,
                bbox,
            });
        }
        if !seen.insert((wire.video_id.clone(), wire.frame)) {
            return Err(Error::DuplicateFrame {
                video_id: wire.video_id,
                frame: wire.frame,
            });
        }
        frames.push(FrameAnnotation {
            video_id: wire.video_id,
            frame_index: wire.frame,
            boxes,
        });
    }

    let clips = clips_from_annotations(&frames);
    Ok((frames, clips))
}

/// Serializes frames back to the JSONL wire format, one line per frame, in
/// input order.
pub fn annotations_to_jsonl(frames: &[FrameAnnotation]) -> String {
    let mut out = String::new();
    for frame in frames {
        let wire = WireFrame {
            video_id: frame.video_id.clone(),
            frame: frame.frame_index,
            boxes: frame
                .boxes
                .iter()
                .map(|b| WireBox {
                    class: b.class_id,
                    x_min: b.bbox.x_min(),
                    y_min: b.bbox.y_min(),
                    x_max: b.bbox.x_max(),
                    y_max: b.bbox.y_max(),
                })
                .collect(),
        };
        out.push_str(&serde_json::to_string(&wire).expect("frame serializes"));
        out.push('\n');
    }
    out
}

/// Groups each class's frames per video into maximal consecutive runs.
/// Output is sorted by `(video_id, class_id, start)`.
pub fn clips_from_annotations(frames: &[FrameAnnotation]) -> Vec<ClipRecord> {
    // (video, class) -> sorted distinct frame indices holding that class
    let mut frames_per_key: BTreeMap<(&str, u32), BTreeSet<u32>> = BTreeMap::new();
    for frame in frames {
        for b in &frame.boxes {
            frames_per_key
                .entry((frame.video_id.as_str(), b.class_id))
                .or_default()
                .insert(frame.frame_index);
        }
    }

    let mut clips = Vec::new();
    for ((video_id, class_id), indices) in frames_per_key {
        let mut run_start: Option<(u32, u32)> = None;
        for &idx in &indices {
            run_start = match run_start {
                None => Some((idx, idx)),
                Some((start, end)) if idx == end + 1 => Some((start, idx)),
                Some((start, end)) => {
                    clips.push(ClipRecord {
                        video_id: video_id.to_string(),
                        class_id,
                        start,
                        end,
                    });
                    Some((idx, idx))
                }
            };
        }
        if let Some((start, end)) = run_start {
            clips.push(ClipRecord {
                video_id: video_id.to_string(),
                class_id,
                start,
                end,
            });
        }
    }
    clips.sort();
    clips
}

/// Counts clips and frames per class. Classes are ranked by descending clip
/// count, ties broken by ascending class id; the empty input yields empty
/// stats with zero totals.
pub fn dataset_stats(clips: &[ClipRecord]) -> DatasetStats {
    let mut acc: BTreeMap<u32, (usize, u64)> = BTreeMap::new();
    for clip in clips {
        let entry = acc.entry(clip.class_id).or_default();
        entry.0 += 1;
        entry.1 += clip.frame_count();
    }
    let mut per_class: Vec<ClassStats> = acc
        .into_iter()
        .map(|(class_id, (clip_count, frame_count))| ClassStats {
            class_id,
            clip_count,
            frame_count,
        })
        .collect();
    per_class.sort_by(|a, b| {
        b.clip_count
            .cmp(&a.clip_count)
            .then(a.class_id.cmp(&b.class_id))
    });
    let total_clips = per_class.iter().map(|c| c.clip_count).sum();
    let total_frames = per_class.iter().map(|c| c.frame_count).sum();
    DatasetStats {
        per_class,
        total_clips,
        total_frames,
    }
}

/// Keeps only classes with at least `min_clips` clips and re-indexes the
/// survivors densely from 0 in descending clip-count order (ties broken by
/// ascending original id), so row k of the stats table gets id k.
pub fn filter_top_classes(
    clips: &[ClipRecord],
    min_clips: usize,
) -> Result<(Vec<ClipRecord>, ClassRemap)> {
    if min_clips < 1 {
        return Err(Error::InvalidParam(format!(
            "min_clips must be at least 1, got {min_clips}"
        )));
    }
    let stats = dataset_stats(clips);
    let entries: Vec<RemapEntry> = stats
        .per_class
        .iter()
        .filter(|c| c.clip_count >= min_clips)
        .enumerate()
        .map(|(new_id, c)| RemapEntry {
            old_id: c.class_id,
            new_id: new_id as u32,
            clip_count: c.clip_count,
        })
        .collect();
    if entries.is_empty() {
        return Err(Error::NoSurvivingClasses { min_clips });
    }
    let remap = ClassRemap { entries };
    let filtered: Vec<ClipRecord> = clips
        .iter()
        .filter_map(|clip| {
            remap.new_id(clip.class_id).map(|id| ClipRecord {
                video_id: clip.video_id.clone(),
                class_id: id,
                start: clip.start,
                end: clip.end,
            })
        })
        .collect();
    Ok((filtered, remap))
}

// Keyed splitmix64 so each class shuffles independently of the others and of
// the class iteration order.
fn class_seed(seed: u64, class_id: u32) -> u64 {
    let mut z = seed ^ (u64::from(class_id) + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Splits clips per class: class `c` with `n_c` clips sends
/// `clamp(round(ratio * n_c), 1, n_c - 1)` clips to train, chosen by a seeded
/// shuffle, so every class lands on both sides. Rounding is half-up.
///
/// The result is a pure function of `(clips, ratio, seed)` — the input order
/// of `clips` does not matter. Every class must have at least 2 clips.
pub fn stratified_split(clips: &[ClipRecord], ratio: f64, seed: u64) -> Result<SplitResult> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidParam(format!(
            "split ratio must be in (0, 1), got {ratio}"
        )));
    }
    let mut per_class: BTreeMap<u32, Vec<&ClipRecord>> = BTreeMap::new();
    for clip in clips {
        per_class.entry(clip.class_id).or_default().push(clip);
    }
    for (&class_id, members) in &per_class {
        if members.len() < 2 {
            return Err(Error::ClassTooSmall {
                class_id,
                clips: members.len(),
            });
        }
    }

    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class_id, mut members) in per_class {
        members.sort();
        let mut rng = ChaCha8Rng::seed_from_u64(class_seed(seed, class_id));
        members.shuffle(&mut rng);
        let n = members.len();
        let rounded = (ratio * n as f64 + 0.5).floor() as usize;
        let train_n = rounded.clamp(1, n - 1);
        for (i, clip) in members.into_iter().enumerate() {
            if i < train_n {
                train.push(clip.clone());
            } else {
                test.push(clip.clone());
            }
        }
    }
    train.sort();
    test.sort();
    Ok(SplitResult {
        train,
        test,
        seed,
        ratio,
    })
}

/// Renders stats as CSV with header `action_index,label,clips,frames`.
/// `action_index` is the 1-based rank; labels come from the optional
/// id-to-name table and default to `class_<id>`.
pub fn stats_to_csv(stats: &DatasetStats, labels: Option<&BTreeMap<u32, String>>) -> String {
    let mut out = String::from("action_index,label,clips,frames\n");
    for (rank, c) in stats.per_class.iter().enumerate() {
        let label = labels
            .and_then(|m| m.get(&c.class_id).cloned())
            .unwrap_or_else(|| format!("class_{}", c.class_id));
        out.push_str(&format!(
            "{},{},{},{}\n",
            rank + 1,
            csv_field(&label),
            c.clip_count,
            c.frame_count
        ));
    }
    out
}

/// Renders the remap table as CSV with header `new_class,old_class,clips`.
pub fn remap_to_csv(remap: &ClassRemap) -> String {
    let mut out = String::from("new_class,old_class,clips\n");
    for e in &remap.entries {
        out.push_str(&format!("{},{},{}\n", e.new_id, e.old_id, e.clip_count));
    }
    out
}

#[derive(Debug, Serialize, Deserialize)]
struct WireClip {
    video_id: String,
    class: u32,
    start: u32,
    end: u32,
}

/// One clip per line: `{"video_id": str, "class": int, "start": int, "end": int}`.
pub fn clips_to_jsonl(clips: &[ClipRecord]) -> String {
    let mut out = String::new();
    for clip in clips {
        let wire = WireClip {
            video_id: clip.video_id.clone(),
            class: clip.class_id,
            start: clip.start,
            end: clip.end,
        };
        out.push_str(&serde_json::to_string(&wire).expect("clip serializes"));
        out.push('\n');
    }
    out
}

/// Split manifest recording the seed and ratio used, plus output sizes.
pub fn split_manifest_json(split: &SplitResult) -> String {
    #[derive(Serialize)]
    struct Manifest {
        seed: u64,
        ratio: f64,
        train_clips: usize,
        test_clips: usize,
    }
    serde_json::to_string_pretty(&Manifest {
        seed: split.seed,
        ratio: split.ratio,
        train_clips: split.train.len(),
        test_clips: split.test.len(),
    })
    .expect("manifest serializes")
}

/// Reads an id-to-name sidecar: a JSON object whose keys are class ids.
pub fn parse_labels(reader: impl BufRead) -> Result<BTreeMap<u32, String>> {
    let raw: BTreeMap<String, String> =
        serde_json::from_reader(reader).map_err(|e| Error::Parse {
            line: 0,
            reason: format!("label sidecar: {e}"),
        })?;
    let mut labels = BTreeMap::new();
    for (key, name) in raw {
        let id: u32 = key.parse().map_err(|_| Error::Parse {
            line: 0,
            reason: format!("label sidecar: class key {key:?} is not an integer"),
        })?;
        labels.insert(id, name);
    }
    Ok(labels)
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
