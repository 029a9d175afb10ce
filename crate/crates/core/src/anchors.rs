//! K-means clustering over ground-truth box shapes to produce prior anchor
//! boxes, plus elbow-based selection of the cluster count.
//!
//! Samples are `(w, h)` pairs normalized by image size. The default
//! objective is the within-cluster sum of squared Euclidean distances
//! (inertia); a `1 − IoU` distance between co-centered shapes is available
//! as an alternative. Runs are deterministic for a given `(samples, k,
//! seed)`: seeding is farthest-first from a seeded starting sample, and all
//! tie-breaks go to the lowest index.
//!
//! After Lloyd iterations converge (squared-Euclidean mode only), a
//! single-point reassignment polish pass runs until no move of one sample to
//! another cluster — updating both cluster means — lowers the inertia. That
//! leaves results locally optimal in the Hartigan sense rather than merely
//! Lloyd-stable.

use std::collections::HashSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::annot::FrameAnnotation;
use crate::error::{Error, Result};

/// Relative inertia improvement under which Lloyd iteration stops.
pub const DEFAULT_TOL: f64 = 1e-6;
/// Default cap on Lloyd iterations.
pub const DEFAULT_MAX_ITER: usize = 100;

/// One box shape, normalized so that `0 < w ≤ 1` and `0 < h ≤ 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeSample {
    w: f64,
    h: f64,
}

impl ShapeSample {
    pub fn new(w: f64, h: f64) -> Result<Self> {
        if !w.is_finite() || !h.is_finite() || !(w > 0.0 && w <= 1.0) || !(h > 0.0 && h <= 1.0) {
            return Err(Error::InvalidParam(format!(
                "shape sample must lie in (0, 1] × (0, 1], got ({w}, {h})"
            )));
        }
        Ok(ShapeSample { w, h })
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn h(&self) -> f64 {
        self.h
    }
}

/// Distance used for assignment and for the reported inertia.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeDistance {
    /// `‖x − μ‖²`; inertia is the within-cluster sum of squares.
    SquaredEuclidean,
    /// `1 − IoU` of the two shapes placed at a common center; inertia is the
    /// sum of these distances.
    OneMinusIou,
}

/// A clustering result: `k` centroids sorted by area ascending, with the
/// inertia of the final assignment and the inertia recorded after every
/// assignment pass (non-increasing in squared-Euclidean mode).
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    pub centroids: Vec<(f64, f64)>,
    pub inertia: f64,
    pub k: usize,
    pub seed: u64,
    pub inertia_history: Vec<f64>,
}

/// Output of [`select_k`]: the elbow choice, the full `(k, inertia)`
/// profile, and the clustering at the chosen k.
#[derive(Debug, Clone, PartialEq)]
pub struct KSelection {
    pub chosen_k: usize,
    pub profile: Vec<(usize, f64)>,
    pub anchors: AnchorSet,
}

/// IoU of two shapes placed at a common center.
fn shape_iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = a.0.min(b.0) * a.1.min(b.1);
    let union = a.0 * a.1 + b.0 * b.1 - inter;
    inter / union
}

fn distance(sample: &ShapeSample, centroid: (f64, f64), metric: ShapeDistance) -> f64 {
    match metric {
        ShapeDistance::SquaredEuclidean => {
            let dw = sample.w - centroid.0;
            let dh = sample.h - centroid.1;
            dw * dw + dh * dh
        }
        ShapeDistance::OneMinusIou => 1.0 - shape_iou((sample.w, sample.h), centroid),
    }
}

/// Farthest-first initialization: the first centroid is a seeded-random
/// sample, each further centroid the sample maximizing the distance to its
/// nearest chosen centroid (ties to the lowest index).
fn farthest_first_init(
    samples: &[ShapeSample],
    k: usize,
    seed: u64,
    metric: ShapeDistance,
) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.random_range(0..samples.len());
    let mut centroids = vec![(samples[first].w, samples[first].h)];
    let mut nearest: Vec<f64> = samples
        .iter()
        .map(|s| distance(s, centroids[0], metric))
        .collect();
    while centroids.len() < k {
        let mut far_idx = 0;
        for (i, &d) in nearest.iter().enumerate() {
            if d > nearest[far_idx] {
                far_idx = i;
            }
        }
        let next = (samples[far_idx].w, samples[far_idx].h);
        centroids.push(next);
        for (i, s) in samples.iter().enumerate() {
            nearest[i] = nearest[i].min(distance(s, next, metric));
        }
    }
    centroids
}

/// Assigns every sample to its nearest centroid (ties to the lowest
/// centroid index) and returns the resulting inertia.
fn assign_pass(
    samples: &[ShapeSample],
    centroids: &[(f64, f64)],
    metric: ShapeDistance,
) -> (Vec<usize>, f64) {
    let mut assignment = Vec::with_capacity(samples.len());
    let mut inertia = 0.0;
    for s in samples {
        let mut best = 0usize;
        let mut best_d = distance(s, centroids[0], metric);
        for (j, &c) in centroids.iter().enumerate().skip(1) {
            let d = distance(s, c, metric);
            if d < best_d {
                best = j;
                best_d = d;
            }
        }
        assignment.push(best);
        inertia += best_d;
    }
    (assignment, inertia)
}

/// Moves each empty cluster's centroid onto the sample farthest from its
/// assigned centroid (never emptying another cluster; ties to the lowest
/// sample index) and steals that sample. Returns the recomputed inertia.
fn fix_empty_clusters(
    samples: &[ShapeSample],
    centroids: &mut [(f64, f64)],
    assignment: &mut [usize],
    metric: ShapeDistance,
) -> f64 {
    let k = centroids.len();
    let mut sizes = vec![0usize; k];
    for &a in assignment.iter() {
        sizes[a] += 1;
    }
    for j in 0..k {
        if sizes[j] > 0 {
            continue;
        }
        let mut far: Option<(usize, f64)> = None;
        for (i, s) in samples.iter().enumerate() {
            if sizes[assignment[i]] < 2 {
                continue;
            }
            let d = distance(s, centroids[assignment[i]], metric);
            if far.map_or(true, |(_, fd)| d > fd) {
                far = Some((i, d));
            }
        }
        let (steal, _) = far.expect("a multi-member cluster exists while any is empty");
        sizes[assignment[steal]] -= 1;
        assignment[steal] = j;
        sizes[j] = 1;
        centroids[j] = (samples[steal].w, samples[steal].h);
    }
    samples
        .iter()
        .zip(assignment.iter())
        .map(|(s, &a)| distance(s, centroids[a], metric))
        .sum()
}

fn update_means(
    samples: &[ShapeSample],
    assignment: &[usize],
    k: usize,
) -> Vec<(f64, f64)> {
    let mut sums = vec![(0.0f64, 0.0f64); k];
    let mut counts = vec![0usize; k];
    for (s, &a) in samples.iter().zip(assignment) {
        sums[a].0 += s.w;
        sums[a].1 += s.h;
        counts[a] += 1;
    }
    sums.iter()
        .zip(&counts)
        .map(|(&(sw, sh), &n)| (sw / n as f64, sh / n as f64))
        .collect()
}

/// Lloyd iteration from the given centroids until the relative inertia
/// improvement drops below `tol` or `max_iter` passes run. Every assignment
/// pass appends its inertia to `history`; a pass that would increase the
/// inertia (floating-point noise) is discarded and the previous state kept,
/// so the returned `(centroids, assignment, inertia)` triple is always
/// mutually consistent.
fn lloyd_converge(
    samples: &[ShapeSample],
    start: Vec<(f64, f64)>,
    tol: f64,
    max_iter: usize,
    metric: ShapeDistance,
    history: &mut Vec<f64>,
) -> (Vec<(f64, f64)>, Vec<usize>, f64) {
    let mut centroids = start;
    let k = centroids.len();
    let mut best: Option<(Vec<(f64, f64)>, Vec<usize>, f64)> = None;
    for _ in 0..max_iter {
        let (mut assignment, mut inertia) = assign_pass(samples, &centroids, metric);
        if assignment_has_empty(&assignment, k) {
            inertia = fix_empty_clusters(samples, &mut centroids, &mut assignment, metric);
        }
        let prev = best.as_ref().map(|&(_, _, i)| i);
        if let Some(prev) = prev {
            if inertia > prev {
                break;
            }
        }
        history.push(inertia);
        let converged = inertia == 0.0
            || prev.is_some_and(|prev| prev > 0.0 && (prev - inertia) / prev < tol);
        best = Some((centroids.clone(), assignment, inertia));
        if converged {
            break;
        }
        let (_, assignment, _) = best.as_ref().unwrap();
        centroids = update_means(samples, assignment, k);
    }
    best.expect("max_iter ≥ 1")
}

fn assignment_has_empty(assignment: &[usize], k: usize) -> bool {
    let mut seen = vec![false; k];
    for &a in assignment {
        seen[a] = true;
    }
    seen.iter().any(|s| !s)
}

/// Finds the first single-sample move (sample index ascending, target
/// cluster ascending) that lowers the squared-Euclidean inertia by more than
/// the noise threshold, using the exact size-weighted change for moving a
/// point between clusters whose means are updated by the move.
fn find_improving_move(
    samples: &[ShapeSample],
    centroids: &[(f64, f64)],
    assignment: &[usize],
    sizes: &[usize],
    threshold: f64,
) -> Option<(usize, usize)> {
    for (i, s) in samples.iter().enumerate() {
        let from = assignment[i];
        if sizes[from] < 2 {
            continue; // moving the only member would empty the cluster
        }
        let d_from = distance(s, centroids[from], ShapeDistance::SquaredEuclidean);
        let gain = sizes[from] as f64 / (sizes[from] as f64 - 1.0) * d_from;
        for to in 0..centroids.len() {
            if to == from {
                continue;
            }
            let d_to = distance(s, centroids[to], ShapeDistance::SquaredEuclidean);
            let cost = sizes[to] as f64 / (sizes[to] as f64 + 1.0) * d_to;
            if cost - gain < -threshold {
                return Some((i, to));
            }
        }
    }
    None
}

/// Full clustering: farthest-first seeding, Lloyd iteration, and (in
/// squared-Euclidean mode) the single-reassignment polish. Centroids are
/// returned sorted by area ascending.
pub fn kmeans_anchors_with(
    samples: &[ShapeSample],
    k: usize,
    seed: u64,
    tol: f64,
    max_iter: usize,
    metric: ShapeDistance,
) -> Result<AnchorSet> {
    validate_kmeans_params(samples.len(), k, tol, max_iter)?;
    let init = farthest_first_init(samples, k, seed, metric);
    let mut history = Vec::new();
    let (centroids, assignment, inertia) =
        lloyd_converge(samples, init, tol, max_iter, metric, &mut history);
    let (centroids, inertia) = if metric == ShapeDistance::SquaredEuclidean {
        polish(
            samples,
            centroids,
            assignment,
            inertia,
            tol,
            max_iter,
            &mut history,
        )
    } else {
        (centroids, inertia)
    };
    Ok(finish_anchor_set(centroids, inertia, k, seed, history))
}

/// [`kmeans_anchors_with`] under the squared-Euclidean objective.
pub fn kmeans_anchors(
    samples: &[ShapeSample],
    k: usize,
    seed: u64,
    tol: f64,
    max_iter: usize,
) -> Result<AnchorSet> {
    kmeans_anchors_with(samples, k, seed, tol, max_iter, ShapeDistance::SquaredEuclidean)
}

/// Re-runs the clustering with seeds derived from `seed` and keeps the
/// lowest-inertia result (ties to the earliest run).
pub fn kmeans_anchors_restarts(
    samples: &[ShapeSample],
    k: usize,
    seed: u64,
    tol: f64,
    max_iter: usize,
    metric: ShapeDistance,
    restarts: usize,
) -> Result<AnchorSet> {
    if restarts < 1 {
        return Err(Error::InvalidParam(format!(
            "restarts must be at least 1, got {restarts}"
        )));
    }
    let mut best: Option<AnchorSet> = None;
    for run in 0..restarts {
        let run_seed = if run == 0 { seed } else { derive_seed(seed, run as u64) };
        let candidate = kmeans_anchors_with(samples, k, run_seed, tol, max_iter, metric)?;
        if best.as_ref().map_or(true, |b| candidate.inertia < b.inertia) {
            best = Some(candidate);
        }
    }
    Ok(best.expect("restarts ≥ 1"))
}

fn validate_kmeans_params(n: usize, k: usize, tol: f64, max_iter: usize) -> Result<()> {
    if k < 1 {
        return Err(Error::InvalidParam("k must be at least 1".into()));
    }
    if n < k {
        return Err(Error::TooFewSamples { samples: n, k });
    }
    if !(tol > 0.0) || !tol.is_finite() {
        return Err(Error::InvalidParam(format!("tol must be positive, got {tol}")));
    }
    if max_iter < 1 {
        return Err(Error::InvalidParam("max_iter must be at least 1".into()));
    }
    Ok(())
}

/// Alternates single-reassignment improvement with Lloyd re-stabilization
/// until no move helps. Each applied move strictly lowers the inertia, so
/// the pass terminates; a cap bounds the work on large inputs.
fn polish(
    samples: &[ShapeSample],
    centroids: Vec<(f64, f64)>,
    assignment: Vec<usize>,
    inertia: f64,
    tol: f64,
    max_iter: usize,
    history: &mut Vec<f64>,
) -> (Vec<(f64, f64)>, f64) {
    let k = centroids.len();
    let move_cap = if samples.len() <= 64 { 10_000 } else { 100 };
    let mut centroids = centroids;
    let mut assignment = assignment;
    let mut inertia = inertia;
    let mut moves = 0usize;
    while moves < move_cap {
        let mut sizes = vec![0usize; k];
        for &a in &assignment {
            sizes[a] += 1;
        }
        let threshold = 1e-10 * (1.0 + inertia);
        let Some((sample, to)) =
            find_improving_move(samples, &centroids, &assignment, &sizes, threshold)
        else {
            break;
        };
        let from = assignment[sample];
        assignment[sample] = to;
        let mut moved = centroids.clone();
        for cluster in [from, to] {
            let (mut sw, mut sh, mut n) = (0.0f64, 0.0f64, 0usize);
            for (s, &a) in samples.iter().zip(&assignment) {
                if a == cluster {
                    sw += s.w;
                    sh += s.h;
                    n += 1;
                }
            }
            moved[cluster] = (sw / n as f64, sh / n as f64);
        }
        let moved_inertia: f64 = samples
            .iter()
            .zip(&assignment)
            .map(|(s, &a)| distance(s, moved[a], ShapeDistance::SquaredEuclidean))
            .sum();
        if moved_inertia >= inertia {
            // the size-weighted estimate was within noise of zero; undo
            assignment[sample] = from;
            break;
        }
        history.push(moved_inertia);
        let (c, a, i) = lloyd_converge(samples, moved, tol, max_iter, ShapeDistance::SquaredEuclidean, history);
        centroids = c;
        assignment = a;
        inertia = i;
        moves += 1;
    }
    (centroids, inertia)
}

fn finish_anchor_set(
    mut centroids: Vec<(f64, f64)>,
    inertia: f64,
    k: usize,
    seed: u64,
    history: Vec<f64>,
) -> AnchorSet {
    centroids.sort_by(|a, b| {
        (a.0 * a.1)
            .partial_cmp(&(b.0 * b.1))
            .expect("centroids are finite")
            .then(a.0.partial_cmp(&b.0).expect("finite"))
            .then(a.1.partial_cmp(&b.1).expect("finite"))
    });
    AnchorSet {
        centroids,
        inertia,
        k,
        seed,
        inertia_history: history,
    }
}

fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn distinct_sample_count(samples: &[ShapeSample]) -> usize {
    samples
        .iter()
        .map(|s| (s.w.to_bits(), s.h.to_bits()))
        .collect::<HashSet<_>>()
        .len()
}

/// Clusters for every `k` in `[k_min, k_max]` and picks the elbow: the
/// interior `k` maximizing the discrete second difference of the inertia
/// profile, ties to the smaller `k`; a two-point range yields `k_min`.
///
/// The profile is forced non-increasing: when a fresh run at `k` lands above
/// the result for `k − 1`, the run is redone warm-started from the previous
/// centroids plus the sample farthest from them, which can only lower the
/// inertia.
pub fn select_k(samples: &[ShapeSample], k_min: usize, k_max: usize, seed: u64) -> Result<KSelection> {
    if !(1 <= k_min && k_min < k_max) {
        return Err(Error::InvalidParam(format!(
            "need 1 ≤ k_min < k_max, got [{k_min}, {k_max}]"
        )));
    }
    let distinct = distinct_sample_count(samples);
    if k_max > distinct {
        return Err(Error::InvalidParam(format!(
            "k_max = {k_max} exceeds the {distinct} distinct samples"
        )));
    }

    // Fresh runs are independent and safe to do in parallel.
    let fresh: Vec<AnchorSet> = (k_min..=k_max)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&k| kmeans_anchors(samples, k, seed, DEFAULT_TOL, DEFAULT_MAX_ITER))
        .collect::<Result<_>>()?;

    let mut runs: Vec<AnchorSet> = Vec::with_capacity(fresh.len());
    for set in fresh {
        let monotone_fix = runs
            .last()
            .filter(|prev| set.inertia > prev.inertia)
            .map(|prev| warm_start_run(samples, prev, set.k, set.seed));
        runs.push(match monotone_fix {
            Some(warm) if warm.inertia < set.inertia => warm,
            _ => set,
        });
    }

    let profile: Vec<(usize, f64)> = runs.iter().map(|r| (r.k, r.inertia)).collect();
    let chosen_k = elbow(&profile);
    let anchors = runs
        .into_iter()
        .find(|r| r.k == chosen_k)
        .expect("chosen k came from the profile");
    Ok(KSelection {
        chosen_k,
        profile,
        anchors,
    })
}

/// Runs Lloyd from the previous solution's centroids plus the sample
/// farthest from all of them. Adding a centroid can only shrink each
/// sample's nearest distance, so the result never exceeds `prev.inertia`.
fn warm_start_run(samples: &[ShapeSample], prev: &AnchorSet, k: usize, seed: u64) -> AnchorSet {
    let metric = ShapeDistance::SquaredEuclidean;
    let mut init = prev.centroids.clone();
    while init.len() < k {
        let mut far = (0usize, f64::NEG_INFINITY);
        for (i, s) in samples.iter().enumerate() {
            let d = init
                .iter()
                .map(|&c| distance(s, c, metric))
                .fold(f64::INFINITY, f64::min);
            if d > far.1 {
                far = (i, d);
            }
        }
        init.push((samples[far.0].w, samples[far.0].h));
    }
    let mut history = Vec::new();
    let (centroids, assignment, inertia) =
        lloyd_converge(samples, init, DEFAULT_TOL, DEFAULT_MAX_ITER, metric, &mut history);
    let (centroids, inertia) = polish(
        samples,
        centroids,
        assignment,
        inertia,
        DEFAULT_TOL,
        DEFAULT_MAX_ITER,
        &mut history,
    );
    finish_anchor_set(centroids, inertia, k, seed, history)
}

/// Interior k maximizing `I(k−1) − 2·I(k) + I(k+1)`; ties and two-point
/// ranges fall back to the smallest k.
fn elbow(profile: &[(usize, f64)]) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for w in profile.windows(3) {
        let second_diff = w[0].1 - 2.0 * w[1].1 + w[2].1;
        if best.map_or(true, |(_, b)| second_diff > b) {
            best = Some((w[1].0, second_diff));
        }
    }
    best.map_or(profile[0].0, |(k, _)| k)
}

/// Extracts normalized shape samples from every ground-truth box.
pub fn shape_samples(
    frames: &[FrameAnnotation],
    image_w: f64,
    image_h: f64,
) -> Result<Vec<ShapeSample>> {
    if !(image_w > 0.0) || !(image_h > 0.0) {
        return Err(Error::InvalidParam(format!(
            "image dimensions must be positive, got {image_w}×{image_h}"
        )));
    }
    let mut samples = Vec::new();
    for frame in frames {
        for b in &frame.boxes {
            samples.push(ShapeSample::new(
                b.bbox.width() / image_w,
                b.bbox.height() / image_h,
            )?);
        }
    }
    Ok(samples)
}

/// JSON rendering: `{"k": K, "inertia": float, "seed": int, "anchors":
/// [[w, h], …]}` with anchors sorted by area ascending. The seed is
/// recorded so a run can be reproduced from its output alone.
pub fn anchors_to_json(set: &AnchorSet) -> String {
    #[derive(Serialize)]
    struct Wire<'a> {
        k: usize,
        inertia: f64,
        seed: u64,
        anchors: &'a [(f64, f64)],
    }
    let mut out = serde_json::to_string_pretty(&Wire {
        k: set.k,
        inertia: set.inertia,
        seed: set.seed,
        anchors: &set.centroids,
    })
    .expect("anchor set serializes");
    out.push('\n');
    out
}

/// Reads an anchor set back from its JSON form. The iteration history is
/// not part of the wire format, so it comes back empty.
pub fn parse_anchors_json(reader: impl std::io::BufRead) -> Result<AnchorSet> {
    #[derive(serde::Deserialize)]
    struct Wire {
        k: usize,
        inertia: f64,
        #[serde(default)]
        seed: u64,
        anchors: Vec<(f64, f64)>,
    }
    let wire: Wire = serde_json::from_reader(reader).map_err(|e| Error::Parse {
        line: 0,
        reason: format!("anchor JSON: {e}"),
    })?;
    if wire.k == 0 || wire.k != wire.anchors.len() {
        return Err(Error::ShapeMismatch(format!(
            "anchor JSON declares k = {} but lists {} anchors",
            wire.k,
            wire.anchors.len()
        )));
    }
    if !wire.inertia.is_finite() || wire.inertia < 0.0 {
        return Err(Error::InvalidParam(format!(
            "inertia must be a non-negative real, got {}",
            wire.inertia
        )));
    }
    for &(w, h) in &wire.anchors {
        if !w.is_finite() || !h.is_finite() || !(w > 0.0 && w <= 1.0) || !(h > 0.0 && h <= 1.0) {
            return Err(Error::InvalidParam(format!(
                "anchor ({w}, {h}) must lie in (0, 1] × (0, 1]"
            )));
        }
    }
    Ok(AnchorSet {
        centroids: wire.anchors,
        inertia: wire.inertia,
        k: wire.k,
        seed: wire.seed,
        inertia_history: Vec::new(),
    })
}

/// CSV rendering of an inertia profile: header `k,inertia`.
pub fn profile_to_csv(profile: &[(usize, f64)]) -> String {
    let mut out = String::from("k,inertia\n");
    for &(k, inertia) in profile {
        out.push_str(&format!("{k},{inertia}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(w: f64, h: f64) -> ShapeSample {
        ShapeSample::new(w, h).unwrap()
    }

    #[test]
    fn sample_bounds_enforced() {
        assert!(ShapeSample::new(0.0, 0.5).is_err());
        assert!(ShapeSample::new(0.5, 1.5).is_err());
        assert!(ShapeSample::new(f64::NAN, 0.5).is_err());
        assert!(ShapeSample::new(1.0, 1.0).is_ok());
    }

    #[test]
    fn single_cluster_closed_form() {
        let samples = vec![sample(0.2, 0.2), sample(0.4, 0.4)];
        let set = kmeans_anchors(&samples, 1, 0, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert!((set.centroids[0].0 - 0.3).abs() <= 1e-12);
        assert!((set.centroids[0].1 - 0.3).abs() <= 1e-12);
        assert!((set.inertia - 0.04).abs() <= 1e-12);
    }

    #[test]
    fn two_point_separation() {
        let samples = vec![sample(0.1, 0.1), sample(0.1, 0.1), sample(0.9, 0.9)];
        for seed in 0..5 {
            let set = kmeans_anchors(&samples, 2, seed, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
            assert_eq!(set.centroids, vec![(0.1, 0.1), (0.9, 0.9)]);
            assert_eq!(set.inertia, 0.0);
        }
    }

    #[test]
    fn k_equals_distinct_count_gives_zero_inertia() {
        let samples = vec![sample(0.1, 0.2), sample(0.5, 0.5), sample(0.9, 0.3)];
        let set = kmeans_anchors(&samples, 3, 7, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(set.inertia, 0.0);
    }

    #[test]
    fn too_few_samples_rejected() {
        let samples = vec![sample(0.5, 0.5)];
        assert!(matches!(
            kmeans_anchors(&samples, 2, 0, DEFAULT_TOL, DEFAULT_MAX_ITER),
            Err(Error::TooFewSamples { samples: 1, k: 2 })
        ));
    }

    #[test]
    fn k1_centroid_is_mean_inertia_is_spread() {
        let samples = vec![
            sample(0.12, 0.3),
            sample(0.5, 0.44),
            sample(0.31, 0.9),
            sample(0.77, 0.05),
        ];
        let set = kmeans_anchors(&samples, 1, 3, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let mw: f64 = samples.iter().map(|s| s.w()).sum::<f64>() / 4.0;
        let mh: f64 = samples.iter().map(|s| s.h()).sum::<f64>() / 4.0;
        assert!((set.centroids[0].0 - mw).abs() <= 1e-12);
        assert!((set.centroids[0].1 - mh).abs() <= 1e-12);
        let spread: f64 = samples
            .iter()
            .map(|s| (s.w() - mw).powi(2) + (s.h() - mh).powi(2))
            .sum();
        assert!((set.inertia - spread).abs() <= 1e-12);
    }

    #[test]
    fn deterministic_for_same_inputs() {
        let samples: Vec<ShapeSample> = (0..40)
            .map(|i| sample(0.05 + (i as f64 * 0.37) % 0.9, 0.05 + (i as f64 * 0.61) % 0.9))
            .collect();
        let a = kmeans_anchors(&samples, 4, 42, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let b = kmeans_anchors(&samples, 4, 42, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn restarts_keep_best() {
        let samples: Vec<ShapeSample> = (0..30)
            .map(|i| sample(0.05 + (i as f64 * 0.41) % 0.9, 0.05 + (i as f64 * 0.29) % 0.9))
            .collect();
        let single = kmeans_anchors(&samples, 3, 11, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let multi = kmeans_anchors_restarts(
            &samples,
            3,
            11,
            DEFAULT_TOL,
            DEFAULT_MAX_ITER,
            ShapeDistance::SquaredEuclidean,
            5,
        )
        .unwrap();
        assert!(multi.inertia <= single.inertia);
    }

    #[test]
    fn three_blob_elbow_selects_three() {
        let mut samples = Vec::new();
        for &(cx, cy) in &[(0.1, 0.1), (0.5, 0.5), (0.9, 0.9)] {
            for &(dx, dy) in &[(0.0, 0.0), (0.004, 0.0), (-0.004, 0.0), (0.0, 0.004), (0.0, -0.004)] {
                samples.push(sample(cx + dx, cy + dy));
            }
        }
        let selection = select_k(&samples, 2, 6, 42).unwrap();
        assert_eq!(selection.chosen_k, 3);
        assert_eq!(selection.profile.len(), 5);
    }

    #[test]
    fn two_point_range_falls_back_to_k_min() {
        let samples = vec![
            sample(0.1, 0.1),
            sample(0.2, 0.2),
            sample(0.8, 0.8),
            sample(0.9, 0.9),
        ];
        let selection = select_k(&samples, 2, 3, 42).unwrap();
        assert_eq!(selection.chosen_k, 2);
    }

    #[test]
    fn select_k_rejects_bad_range() {
        let samples = vec![sample(0.1, 0.1), sample(0.2, 0.2), sample(0.3, 0.3)];
        assert!(select_k(&samples, 3, 3, 0).is_err());
        assert!(select_k(&samples, 2, 9, 0).is_err());
    }

    #[test]
    fn iou_metric_runs_and_reports_consistent_inertia() {
        let samples: Vec<ShapeSample> = (0..20)
            .map(|i| sample(0.05 + (i as f64 * 0.43) % 0.9, 0.05 + (i as f64 * 0.17) % 0.9))
            .collect();
        let set = kmeans_anchors_with(
            &samples,
            3,
            9,
            DEFAULT_TOL,
            DEFAULT_MAX_ITER,
            ShapeDistance::OneMinusIou,
        )
        .unwrap();
        // recompute inertia from the returned centroids
        let (_, recomputed) = assign_pass(&samples, &set.centroids, ShapeDistance::OneMinusIou);
        assert!((set.inertia - recomputed).abs() <= 1e-12);
    }

    #[test]
    fn anchors_json_shape() {
        let samples = vec![sample(0.1, 0.1), sample(0.1, 0.1), sample(0.9, 0.9)];
        let set = kmeans_anchors(&samples, 2, 7, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let json = anchors_to_json(&set);
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(value["k"], 2);
        assert_eq!(value["inertia"], 0.0);
        assert_eq!(value["seed"], 7);
        assert_eq!(value["anchors"][0][0], 0.1);
        assert_eq!(value["anchors"][1][1], 0.9);
    }

    #[test]
    fn anchors_json_round_trip() {
        let samples = vec![
            sample(0.12, 0.34),
            sample(0.56, 0.78),
            sample(0.9, 0.11),
            sample(0.33, 0.44),
        ];
        let set = kmeans_anchors(&samples, 3, 42, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let json = anchors_to_json(&set);
        let back = parse_anchors_json(json.as_bytes()).unwrap();
        assert_eq!(back.centroids, set.centroids);
        assert_eq!(back.inertia, set.inertia);
        assert_eq!(back.k, set.k);
        assert_eq!(back.seed, set.seed);
        assert!(back.inertia_history.is_empty());
    }

    #[test]
    fn anchors_json_rejects_bad_shapes() {
        // k disagreeing with the anchor count
        let err = parse_anchors_json(
            r#"{"k": 3, "inertia": 0.0, "anchors": [[0.5, 0.5]]}"#.as_bytes(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch(_)));
        // anchor outside the unit square
        let err = parse_anchors_json(
            r#"{"k": 1, "inertia": 0.0, "anchors": [[1.5, 0.5]]}"#.as_bytes(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidParam(_)));
        // missing seed defaults to zero rather than failing
        let set = parse_anchors_json(
            r#"{"k": 1, "inertia": 0.25, "anchors": [[0.5, 0.5]]}"#.as_bytes(),
        )
        .unwrap();
        assert_eq!(set.seed, 0);
    }

    fn arb_samples(max_len: usize) -> impl Strategy<Value = Vec<ShapeSample>> {
        proptest::collection::vec((1u32..=100, 1u32..=100), 2..max_len).prop_map(|raw| {
            raw.into_iter()
                .map(|(w, h)| sample(w as f64 / 100.0, h as f64 / 100.0))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn history_never_increases(samples in arb_samples(40), k in 1usize..5, seed in 0u64..100) {
            prop_assume!(samples.len() >= k);
            let set = kmeans_anchors(&samples, k, seed, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
            for w in set.inertia_history.windows(2) {
                prop_assert!(w[1] <= w[0], "history increased: {} -> {}", w[0], w[1]);
            }
            prop_assert!(set.inertia <= set.inertia_history[0]);
            prop_assert_eq!(set.inertia, *set.inertia_history.last().unwrap());
        }

        #[test]
        fn profile_is_monotone(samples in arb_samples(30), seed in 0u64..50) {
            let distinct = distinct_sample_count(&samples);
            prop_assume!(distinct >= 4);
            let selection = select_k(&samples, 2, 4.min(distinct), seed).unwrap();
            for w in selection.profile.windows(2) {
                prop_assert!(w[1].1 <= w[0].1, "profile increased at k={}", w[1].0);
            }
        }

        #[test]
        fn small_instances_are_locally_optimal(samples in arb_samples(8), k in 1usize..4, seed in 0u64..20) {
            prop_assume!(samples.len() >= k);
            let set = kmeans_anchors(&samples, k, seed, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();

            // reconstruct the assignment from the returned centroids
            let (assignment, inertia) = assign_pass(&samples, &set.centroids, ShapeDistance::SquaredEuclidean);
            prop_assert!((inertia - set.inertia).abs() <= 1e-12);

            // brute force over every labeling for the optimum
            let n = samples.len();
            let mut optimum = f64::INFINITY;
            let mut labels = vec![0usize; n];
            loop {
                let means = update_means_checked(&samples, &labels, k);
                if let Some(means) = means {
                    let total: f64 = samples
                        .iter()
                        .zip(&labels)
                        .map(|(s, &a)| distance(s, means[a], ShapeDistance::SquaredEuclidean))
                        .sum();
                    optimum = optimum.min(total);
                }
                // odometer increment
                let mut pos = 0;
                loop {
                    if pos == n { break; }
                    labels[pos] += 1;
                    if labels[pos] < k { break; }
                    labels[pos] = 0;
                    pos += 1;
                }
                if pos == n { break; }
            }

            let globally_optimal = set.inertia <= optimum * (1.0 + 1e-9) + 1e-15;

            // single-reassignment local optimality with updated means
            let mut locally_optimal = true;
            let mut sizes = vec![0usize; k];
            for &a in &assignment { sizes[a] += 1; }
            'outer: for i in 0..n {
                let from = assignment[i];
                if sizes[from] < 2 { continue; }
                for to in 0..k {
                    if to == from { continue; }
                    let mut labels = assignment.clone();
                    labels[i] = to;
                    let means = update_means_checked(&samples, &labels, k).unwrap();
                    let total: f64 = samples
                        .iter()
                        .zip(&labels)
                        .map(|(s, &a)| distance(s, means[a], ShapeDistance::SquaredEuclidean))
                        .sum();
                    if total < set.inertia - 1e-9 * (1.0 + set.inertia) {
                        locally_optimal = false;
                        break 'outer;
                    }
                }
            }
            prop_assert!(globally_optimal || locally_optimal,
                "inertia {} vs optimum {}, and an improving move exists", set.inertia, optimum);
        }
    }

    /// Means over an explicit labeling; `None` when some cluster is empty.
    fn update_means_checked(
        samples: &[ShapeSample],
        labels: &[usize],
        k: usize,
    ) -> Option<Vec<(f64, f64)>> {
        let mut sums = vec![(0.0f64, 0.0f64); k];
        let mut counts = vec![0usize; k];
        for (s, &a) in samples.iter().zip(labels) {
            sums[a].0 += s.w();
            sums[a].1 += s.h();
            counts[a] += 1;
        }
        if counts.iter().any(|&c| c == 0) {
            return None;
        }
        Some(
            sums.iter()
                .zip(&counts)
                .map(|(&(sw, sh), &n)| (sw / n as f64, sh / n as f64))
                .collect(),
        )
    }
}
