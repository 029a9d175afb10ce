//! Decoding of raw grid-shaped detector outputs into detections using
//! anchor priors, plus greedy per-class non-maximum suppression.
//!
//! A grid output holds `S_w × S_h` cells with `A` anchors each; every
//! `(cell, anchor)` slot carries `(t_x, t_y, t_w, t_h, objectness)` followed
//! by `C` class scores. The box transform is the usual single-stage one:
//! the cell-relative center goes through a logistic, the size scales the
//! anchor exponentially, and the confidence is
//! `σ(objectness) · softmax(class scores)` at the argmax class.
//!
//! The on-disk format is little-endian: the magic bytes `GRID`, then
//! `S_w, S_h, A, C` as 32-bit unsigned integers (a 20-byte header), then the
//! tensor as 32-bit floats, cells row-major (x fastest within a row of
//! cells), anchor-minor within a cell.

use std::io::{Read, Write};

use crate::anchors::AnchorSet;
use crate::error::{Error, Result};
use crate::eval::Detection;
use crate::geom::BBox;

const MAGIC: &[u8; 4] = b"GRID";
const FIELDS_BEFORE_CLASSES: usize = 5;

/// A raw detector output tensor with its grid geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct GridOutput {
    s_w: u32,
    s_h: u32,
    anchors: u32,
    classes: u32,
    /// `s_w · s_h · anchors · (5 + classes)` finite values.
    data: Vec<f64>,
}

impl GridOutput {
    pub fn new(s_w: u32, s_h: u32, anchors: u32, classes: u32, data: Vec<f64>) -> Result<Self> {
        if s_w == 0 || s_h == 0 || anchors == 0 || classes == 0 {
            return Err(Error::ShapeMismatch(format!(
                "grid dimensions must be positive, got {s_w}×{s_h}, {anchors} anchors, {classes} classes"
            )));
        }
        let expected = slot_count(s_w, s_h, anchors)
            .and_then(|slots| slots.checked_mul(FIELDS_BEFORE_CLASSES + classes as usize))
            .ok_or_else(|| Error::ShapeMismatch("grid dimensions overflow".into()))?;
        if data.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "expected {expected} values for a {s_w}×{s_h}×{anchors}×(5+{classes}) grid, got {}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Format(format!("non-finite grid value {bad}")));
        }
        Ok(GridOutput {
            s_w,
            s_h,
            anchors,
            classes,
            data,
        })
    }

    pub fn grid_width(&self) -> u32 {
        self.s_w
    }

    pub fn grid_height(&self) -> u32 {
        self.s_h
    }

    pub fn anchor_count(&self) -> u32 {
        self.anchors
    }

    pub fn class_count(&self) -> u32 {
        self.classes
    }

    /// The `(t_x, t_y, t_w, t_h, objectness, scores…)` slice for one slot.
    fn slot(&self, cell_x: u32, cell_y: u32, anchor: u32) -> &[f64] {
        let stride = FIELDS_BEFORE_CLASSES + self.classes as usize;
        let slot = ((cell_y as usize * self.s_w as usize + cell_x as usize)
            * self.anchors as usize
            + anchor as usize)
            * stride;
        &self.data[slot..slot + stride]
    }
}

fn slot_count(s_w: u32, s_h: u32, anchors: u32) -> Option<usize> {
    (s_w as usize)
        .checked_mul(s_h as usize)?
        .checked_mul(anchors as usize)
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Numerically stable softmax (max-shifted).
fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Decodes a grid into detections for one frame.
///
/// For cell `(i, j)` and anchor `a`: the center is
/// `((i + σ(t_x))/S_w · image_w, (j + σ(t_y))/S_h · image_h)`, the size is
/// `(anchor_w · e^{t_w} · image_w, anchor_h · e^{t_h} · image_h)`, and the
/// confidence is `σ(objectness) · softmax(scores)[argmax]`. One detection
/// is produced per slot, at the argmax class (ties to the lowest class id),
/// when the confidence reaches `conf_floor`; boxes are clipped to the image
/// and the rare slot whose size underflows to nothing is dropped.
pub fn decode_grid(
    grid: &GridOutput,
    anchors: &AnchorSet,
    image_w: f64,
    image_h: f64,
    conf_floor: f64,
    video_id: &str,
    frame_index: u32,
) -> Result<Vec<Detection>> {
    if anchors.k != grid.anchors as usize {
        return Err(Error::ShapeMismatch(format!(
            "grid expects {} anchors but the anchor set has {}",
            grid.anchors, anchors.k
        )));
    }
    if !(image_w > 0.0) || !(image_h > 0.0) || !image_w.is_finite() || !image_h.is_finite() {
        return Err(Error::InvalidParam(format!(
            "image dimensions must be positive, got {image_w}×{image_h}"
        )));
    }
    if !conf_floor.is_finite() || !(0.0..=1.0).contains(&conf_floor) {
        return Err(Error::InvalidParam(format!(
            "conf_floor must lie in [0, 1], got {conf_floor}"
        )));
    }

    let mut detections = Vec::new();
    for cell_y in 0..grid.s_h {
        for cell_x in 0..grid.s_w {
            for anchor in 0..grid.anchors {
                let slot = grid.slot(cell_x, cell_y, anchor);
                let (anchor_w, anchor_h) = anchors.centroids[anchor as usize];
                let cx = (cell_x as f64 + sigmoid(slot[0])) / grid.s_w as f64 * image_w;
                let cy = (cell_y as f64 + sigmoid(slot[1])) / grid.s_h as f64 * image_h;
                let w = anchor_w * slot[2].exp() * image_w;
                let h = anchor_h * slot[3].exp() * image_h;
                let objectness = sigmoid(slot[4]);
                let probs = softmax(&slot[FIELDS_BEFORE_CLASSES..]);
                let (best_class, best_prob) = probs
                    .iter()
                    .enumerate()
                    .fold((0usize, f64::NEG_INFINITY), |(bi, bp), (i, &p)| {
                        if p > bp {
                            (i, p)
                        } else {
                            (bi, bp)
                        }
                    });
                let confidence = objectness * best_prob;
                if confidence < conf_floor {
                    continue;
                }
                let x_min = (cx - w / 2.0).clamp(0.0, image_w);
                let x_max = (cx + w / 2.0).clamp(0.0, image_w);
                let y_min = (cy - h / 2.0).clamp(0.0, image_h);
                let y_max = (cy + h / 2.0).clamp(0.0, image_h);
                let Ok(bbox) = BBox::new(x_min, y_min, x_max, y_max) else {
                    continue; // size underflowed to a zero-area box
                };
                detections.push(Detection {
                    video_id: video_id.to_string(),
                    frame_index,
                    class_id: best_class as u32,
                    confidence,
                    bbox,
                });
            }
        }
    }
    Ok(detections)
}

/// Greedy per-class non-maximum suppression: within each class, keep the
/// highest-confidence detection and drop any other with IoU at or above the
/// threshold against a kept box. Kept detections stay in input order. All
/// detections must belong to one frame.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Result<Vec<Detection>> {
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

    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .confidence
            .partial_cmp(&dets[a].confidence)
            .expect("confidences are finite")
            .then(a.cmp(&b))
    });

    let mut keep = vec![false; dets.len()];
    let mut kept_indices: Vec<usize> = Vec::new();
    for idx in order {
        let suppressed = kept_indices.iter().any(|&k| {
            dets[k].class_id == dets[idx].class_id
                && crate::geom::iou(&dets[k].bbox, &dets[idx].bbox) >= iou_threshold
        });
        if !suppressed {
            keep[idx] = true;
            kept_indices.push(idx);
        }
    }
    Ok(dets
        .iter()
        .enumerate()
        .filter(|&(i, _)| keep[i])
        .map(|(_, d)| d.clone())
        .collect())
}

/// Writes the binary grid format (little-endian, see module docs).
pub fn write_grid(grid: &GridOutput, writer: &mut impl Write) -> Result<()> {
    writer.write_all(MAGIC)?;
    for dim in [grid.s_w, grid.s_h, grid.anchors, grid.classes] {
        writer.write_all(&dim.to_le_bytes())?;
    }
    for &v in &grid.data {
        writer.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

/// Reads the binary grid format, validating the magic bytes, the exact
/// payload length, and finiteness of every value.
pub fn read_grid(reader: &mut impl Read) -> Result<GridOutput> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    if bytes.len() < 20 {
        return Err(Error::Format(format!(
            "grid header needs 20 bytes, got {}",
            bytes.len()
        )));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Format("bad magic, expected \"GRID\"".into()));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let (s_w, s_h, anchors, classes) = (dim(0), dim(1), dim(2), dim(3));
    if s_w == 0 || s_h == 0 || anchors == 0 || classes == 0 {
        return Err(Error::Format(format!(
            "grid dimensions must be positive, got {s_w}×{s_h}, {anchors} anchors, {classes} classes"
        )));
    }
    let values = slot_count(s_w, s_h, anchors)
        .and_then(|slots| slots.checked_mul(FIELDS_BEFORE_CLASSES + classes as usize))
        .ok_or_else(|| Error::Format("grid dimensions overflow".into()))?;
    let expected_len = 20 + values * 4;
    if bytes.len() != expected_len {
        return Err(Error::Format(format!(
            "expected {expected_len} bytes for a {s_w}×{s_h}×{anchors}×(5+{classes}) grid, got {}",
            bytes.len()
        )));
    }
    let mut data = Vec::with_capacity(values);
    for chunk in bytes[20..].chunks_exact(4) {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::Format(format!("non-finite grid value {v}")));
        }
        data.push(v as f64);
    }
    GridOutput::new(s_w, s_h, anchors, classes, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anchors::ShapeSample;
    use proptest::prelude::*;

    fn anchor_set(shapes: &[(f64, f64)]) -> AnchorSet {
        AnchorSet {
            centroids: shapes.to_vec(),
            inertia: 0.0,
            k: shapes.len(),
            seed: 0,
            inertia_history: vec![0.0],
        }
    }

    /// 1×1 grid, 1 anchor, 1 class, all logits zero.
    fn unit_grid() -> GridOutput {
        GridOutput::new(1, 1, 1, 1, vec![0.0; 6]).unwrap()
    }

    #[test]
    fn closed_form_unit_grid() {
        let dets = decode_grid(&unit_grid(), &anchor_set(&[(0.5, 0.5)]), 100.0, 100.0, 0.0, "v", 0)
            .unwrap();
        assert_eq!(dets.len(), 1);
        let d = &dets[0];
        assert_eq!(d.bbox.x_min(), 25.0);
        assert_eq!(d.bbox.y_min(), 25.0);
        assert_eq!(d.bbox.x_max(), 75.0);
        assert_eq!(d.bbox.y_max(), 75.0);
        assert_eq!(d.confidence, 0.5);
        assert_eq!(d.class_id, 0);
    }

    #[test]
    fn zero_offsets_center_in_cell() {
        // 2×2 grid: cell (1, 0) should center at (3/4·W, 1/4·H)
        let stride = 6;
        let mut data = vec![0.0; 2 * 2 * stride];
        // weaken every slot except cell (1,0) anchor 0 via objectness -30
        for (slot, chunk) in data.chunks_mut(stride).enumerate() {
            if slot != 1 {
                chunk[4] = -30.0;
            }
        }
        let grid = GridOutput::new(2, 2, 1, 1, data).unwrap();
        let dets =
            decode_grid(&grid, &anchor_set(&[(0.25, 0.25)]), 80.0, 40.0, 0.4, "v", 0).unwrap();
        assert_eq!(dets.len(), 1);
        let d = &dets[0];
        let center_x = (d.bbox.x_min() + d.bbox.x_max()) / 2.0;
        let center_y = (d.bbox.y_min() + d.bbox.y_max()) / 2.0;
        assert!((center_x - 60.0).abs() <= 1e-12);
        assert!((center_y - 10.0).abs() <= 1e-12);
        // t_w = t_h = 0 → size is anchor × image exactly
        assert!((d.bbox.width() - 20.0).abs() <= 1e-12);
        assert!((d.bbox.height() - 10.0).abs() <= 1e-12);
    }

    #[test]
    fn argmax_class_wins() {
        // 1 class slot scores (2.0, 5.0, 1.0) → class 1
        let data = vec![0.0, 0.0, 0.0, 0.0, 0.0, 2.0, 5.0, 1.0];
        let grid = GridOutput::new(1, 1, 1, 3, data).unwrap();
        let dets =
            decode_grid(&grid, &anchor_set(&[(0.5, 0.5)]), 100.0, 100.0, 0.0, "v", 0).unwrap();
        assert_eq!(dets[0].class_id, 1);
    }

    #[test]
    fn anchor_count_mismatch_rejected() {
        let err = decode_grid(
            &unit_grid(),
            &anchor_set(&[(0.5, 0.5), (0.2, 0.2)]),
            100.0,
            100.0,
            0.0,
            "v",
            0,
        );
        assert!(matches!(err, Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn shape_validation() {
        assert!(GridOutput::new(1, 1, 1, 1, vec![0.0; 5]).is_err());
        assert!(GridOutput::new(0, 1, 1, 1, vec![]).is_err());
        assert!(GridOutput::new(1, 1, 1, 1, vec![f64::NAN; 6]).is_err());
    }

    #[test]
    fn boxes_clipped_into_image() {
        // big positive t_w/t_h blow the box far past the image
        let data = vec![0.0, 0.0, 6.0, 6.0, 0.0, 0.0];
        let grid = GridOutput::new(1, 1, 1, 1, data).unwrap();
        let dets =
            decode_grid(&grid, &anchor_set(&[(0.9, 0.9)]), 64.0, 48.0, 0.0, "v", 0).unwrap();
        let d = &dets[0];
        assert_eq!(d.bbox.x_min(), 0.0);
        assert_eq!(d.bbox.y_min(), 0.0);
        assert_eq!(d.bbox.x_max(), 64.0);
        assert_eq!(d.bbox.y_max(), 48.0);
    }

    #[test]
    fn grid_round_trip() {
        let data: Vec<f64> = (0..2 * 3 * 2 * 7)
            .map(|i| (i as f64 * 0.25) - 10.0)
            .collect();
        let grid = GridOutput::new(2, 3, 2, 2, data).unwrap();
        let mut bytes = Vec::new();
        write_grid(&grid, &mut bytes).unwrap();
        assert_eq!(&bytes[0..4], b"GRID");
        assert_eq!(bytes.len(), 20 + 2 * 3 * 2 * 7 * 4);
        let back = read_grid(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, grid);
    }

    #[test]
    fn grid_read_rejects_corruption() {
        let mut bytes = Vec::new();
        write_grid(&unit_grid(), &mut bytes).unwrap();

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(
            read_grid(&mut bad_magic.as_slice()),
            Err(Error::Format(_))
        ));

        let truncated = &bytes[..bytes.len() - 4];
        assert!(matches!(
            read_grid(&mut &truncated[..]),
            Err(Error::Format(_))
        ));

        let mut trailing = bytes.clone();
        trailing.extend_from_slice(&[0, 0, 0, 0]);
        assert!(matches!(
            read_grid(&mut trailing.as_slice()),
            Err(Error::Format(_))
        ));

        let mut with_nan = bytes.clone();
        let nan = f32::NAN.to_le_bytes();
        with_nan[20..24].copy_from_slice(&nan);
        assert!(matches!(
            read_grid(&mut with_nan.as_slice()),
            Err(Error::Format(_))
        ));
    }

    fn det(class_id: u32, conf: f64, x: f64, w: f64) -> Detection {
        Detection::new("v", 0, class_id, conf, BBox::new(x, 0.0, x + w, 10.0).unwrap()).unwrap()
    }

    #[test]
    fn nms_drops_duplicate() {
        let dets = vec![det(0, 0.9, 0.0, 10.0), det(0, 0.8, 0.0, 10.0)];
        let kept = nms(&dets, 0.5).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].confidence, 0.9);
    }

    #[test]
    fn nms_keeps_disjoint() {
        let dets = vec![det(0, 0.9, 0.0, 10.0), det(0, 0.8, 50.0, 10.0)];
        let kept = nms(&dets, 0.5).unwrap();
        assert_eq!(kept.len(), 2);
    }

    #[test]
    fn nms_chain_suppression() {
        // A overlaps B (IoU 0.6) and B overlaps C (IoU 0.6), but A and C
        // overlap only at IoU 1/3: dropping B must not suppress C.
        let a = det(0, 0.9, 0.0, 10.0);
        let b = det(0, 0.8, 2.5, 10.0);
        let c = det(0, 0.7, 5.0, 10.0);
        let kept = nms(&[a.clone(), b, c.clone()], 0.45).unwrap();
        assert_eq!(kept, vec![a, c]);
    }

    #[test]
    fn nms_is_per_class() {
        let dets = vec![det(0, 0.9, 0.0, 10.0), det(1, 0.8, 0.0, 10.0)];
        let kept = nms(&dets, 0.5).unwrap();
        assert_eq!(kept.len(), 2);
    }

    #[test]
    fn nms_keeps_input_order() {
        let dets = vec![
            det(0, 0.7, 0.0, 10.0),
            det(0, 0.9, 50.0, 10.0),
            det(0, 0.8, 100.0, 10.0),
        ];
        let kept = nms(&dets, 0.5).unwrap();
        let confs: Vec<f64> = kept.iter().map(|d| d.confidence).collect();
        assert_eq!(confs, vec![0.7, 0.9, 0.8]);
    }

    #[test]
    fn nms_rejects_mixed_frames() {
        let mut other = det(0, 0.5, 0.0, 10.0);
        other.frame_index = 3;
        assert!(matches!(
            nms(&[det(0, 0.9, 0.0, 10.0), other], 0.5),
            Err(Error::MixedFrames(_))
        ));
    }

    fn arb_grid() -> impl Strategy<Value = (GridOutput, AnchorSet)> {
        (1u32..4, 1u32..4, 1u32..3, 1u32..4)
            .prop_flat_map(|(s_w, s_h, a, c)| {
                let len = (s_w * s_h * a * (5 + c)) as usize;
                (
                    Just((s_w, s_h, a, c)),
                    proptest::collection::vec(-5.0f64..5.0, len..=len),
                    proptest::collection::vec((0.05f64..1.0, 0.05f64..1.0), a as usize..=a as usize),
                )
            })
            .prop_map(|((s_w, s_h, a, c), data, anchors)| {
                (
                    GridOutput::new(s_w, s_h, a, c, data).unwrap(),
                    anchor_set(&anchors),
                )
            })
    }

    proptest! {
        #[test]
        fn decode_respects_bounds_and_count((grid, anchors) in arb_grid()) {
            let dets = decode_grid(&grid, &anchors, 320.0, 240.0, 0.0, "v", 0).unwrap();
            let slots = (grid.grid_width() * grid.grid_height() * grid.anchor_count()) as usize;
            prop_assert!(dets.len() <= slots);
            for d in &dets {
                prop_assert!(d.bbox.x_min() >= 0.0 && d.bbox.x_max() <= 320.0);
                prop_assert!(d.bbox.y_min() >= 0.0 && d.bbox.y_max() <= 240.0);
                prop_assert!((0.0..=1.0).contains(&d.confidence));
                prop_assert!(d.class_id < grid.class_count());
            }
        }

        #[test]
        fn decode_monotone_in_conf_floor((grid, anchors) in arb_grid(), floor in 0.0f64..1.0) {
            let low = decode_grid(&grid, &anchors, 320.0, 240.0, 0.0, "v", 0).unwrap();
            let high = decode_grid(&grid, &anchors, 320.0, 240.0, floor, "v", 0).unwrap();
            for d in &high {
                prop_assert!(low.contains(d));
            }
            prop_assert_eq!(
                high.len(),
                low.iter().filter(|d| d.confidence >= floor).count()
            );
        }

        #[test]
        fn nms_invariants(confs in proptest::collection::vec((0u32..3, 1u32..=100, 0u32..15), 0..12)) {
            let dets: Vec<Detection> = confs
                .iter()
                .map(|&(class, conf, x)| det(class, conf as f64 / 100.0, x as f64 * 2.0, 10.0))
                .collect();
            let kept = nms(&dets, 0.45).unwrap();
            // kept is a subsequence of the input
            let mut cursor = 0;
            for k in &kept {
                while cursor < dets.len() && &dets[cursor] != k {
                    cursor += 1;
                }
                prop_assert!(cursor < dets.len(), "kept detection not in input order");
                cursor += 1;
            }
            // no two kept same-class boxes overlap at or above the threshold
            for (i, a) in kept.iter().enumerate() {
                for b in kept.iter().skip(i + 1) {
                    if a.class_id == b.class_id {
                        prop_assert!(crate::geom::iou(&a.bbox, &b.bbox) < 0.45);
                    }
                }
            }
        }
    }

    #[test]
    fn shape_sample_round_trip_with_anchor_set() {
        // anchors produced from clustering plug straight into decoding
        let samples = vec![
            ShapeSample::new(0.5, 0.5).unwrap(),
            ShapeSample::new(0.5, 0.5).unwrap(),
        ];
        let set = crate::anchors::kmeans_anchors(&samples, 1, 0, 1e-6, 100).unwrap();
        let dets = decode_grid(&unit_grid(), &set, 100.0, 100.0, 0.0, "v", 7).unwrap();
        assert_eq!(dets[0].bbox.x_min(), 25.0);
        assert_eq!(dets[0].frame_index, 7);
    }
}
