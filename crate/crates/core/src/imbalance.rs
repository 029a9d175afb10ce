//! Class-imbalance weighting: a focal factor `w₁ = (1 − P)^α` that
//! down-weights confidently classified samples, an effective-number factor
//! `w₂ = (1 − β^n) / (1 − β)` driven by each class's frame count, their
//! product, and a reference weighted cross-entropy loss.
//!
//! Note the direction of `w₂`: it grows with the frame count, so frequent
//! classes get LARGER weights. [`inverted_effective_number_weights`]
//! provides the reciprocal form `(1 − β) / (1 − β^n)` for the conventional
//! rebalancing direction.

use crate::annot::DatasetStats;
use crate::error::{Error, Result};

/// Hyperparameters: focal exponent `α > 0` and effective-number `β ∈ [0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImbalanceParams {
    alpha: f64,
    beta: f64,
}

impl ImbalanceParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(Error::InvalidParam(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        if !beta.is_finite() || !(0.0..1.0).contains(&beta) {
            return Err(Error::InvalidParam(format!(
                "beta must lie in [0, 1), got {beta}"
            )));
        }
        Ok(ImbalanceParams { alpha, beta })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

impl Default for ImbalanceParams {
    /// α = 2, β = 0.7.
    fn default() -> Self {
        ImbalanceParams {
            alpha: 2.0,
            beta: 0.7,
        }
    }
}

/// Effective-number weight of one class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassWeight {
    pub class_id: u32,
    pub n_frames: u64,
    pub w2: f64,
}

/// Per-class weights plus the parameters they were computed with. Entry
/// order follows the input (`weights_from_stats` keeps the stats ranking).
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights {
    pub entries: Vec<ClassWeight>,
    pub params: ImbalanceParams,
}

impl ClassWeights {
    pub fn w2(&self, class_id: u32) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.class_id == class_id)
            .map(|e| e.w2)
    }
}

/// `w₁ = (1 − P)^α` for a classifier confidence `P ∈ [0, 1]`.
pub fn focal_weight(p: f64, alpha: f64) -> Result<f64> {
    if !p.is_finite() || !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParam(format!(
            "P must lie in [0, 1], got {p}"
        )));
    }
    if !alpha.is_finite() || alpha <= 0.0 {
        return Err(Error::InvalidParam(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    Ok((1.0 - p).powf(alpha))
}

/// `β^n` with the exponent taken as an integer, so `n = 1` returns `β`
/// exactly and `w₂(1, β) = (1 − β)/(1 − β) = 1` exactly.
fn beta_pow(beta: f64, n: u64) -> f64 {
    if n <= i32::MAX as u64 {
        beta.powi(n as i32)
    } else {
        beta.powf(n as f64)
    }
}

/// `w₂(j) = (1 − β^{n_j}) / (1 − β)` per class. `n = 0` gives weight 0 and
/// `β = 0` gives weight 1 for every `n ≥ 1`.
pub fn effective_number_weights(
    frame_counts: &[(u32, u64)],
    params: ImbalanceParams,
) -> ClassWeights {
    let entries = frame_counts
        .iter()
        .map(|&(class_id, n_frames)| ClassWeight {
            class_id,
            n_frames,
            w2: (1.0 - beta_pow(params.beta, n_frames)) / (1.0 - params.beta),
        })
        .collect();
    ClassWeights { entries, params }
}

/// Reciprocal form `(1 − β) / (1 − β^{n_j})`, which down-weights frequent
/// classes. A class with `n = 0` still gets weight 0 (rather than a
/// division by zero): absent classes carry no weight in either direction.
pub fn inverted_effective_number_weights(
    frame_counts: &[(u32, u64)],
    params: ImbalanceParams,
) -> ClassWeights {
    let entries = frame_counts
        .iter()
        .map(|&(class_id, n_frames)| ClassWeight {
            class_id,
            n_frames,
            w2: if n_frames == 0 {
                0.0
            } else {
                (1.0 - params.beta) / (1.0 - beta_pow(params.beta, n_frames))
            },
        })
        .collect();
    ClassWeights { entries, params }
}

/// `w = w₁(P) · w₂(class)`.
pub fn combined_weight(p: f64, class_id: u32, weights: &ClassWeights) -> Result<f64> {
    let w2 = weights
        .w2(class_id)
        .ok_or(Error::UnknownClass { class_id })?;
    Ok(focal_weight(p, weights.params.alpha)? * w2)
}

/// Weighted cross-entropy of the target class:
/// `w₁(P_target) · w₂(target) · (−ln P_target)`, with `P_target` clamped to
/// at least 1e-12 before the log. The probability vector must sum to 1
/// within 1e-6.
pub fn weighted_focal_ce(
    prob_vector: &[f64],
    target: u32,
    weights: &ClassWeights,
) -> Result<f64> {
    for (i, &p) in prob_vector.iter().enumerate() {
        if !p.is_finite() || !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidParam(format!(
                "probability {i} must lie in [0, 1], got {p}"
            )));
        }
    }
    let sum: f64 = prob_vector.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidParam(format!(
            "probabilities must sum to 1 (±1e-6), got {sum}"
        )));
    }
    let p_target = *prob_vector
        .get(target as usize)
        .ok_or(Error::UnknownClass { class_id: target })?;
    let w2 = weights
        .w2(target)
        .ok_or(Error::UnknownClass { class_id: target })?;
    let w1 = focal_weight(p_target, weights.params.alpha)?;
    Ok(w1 * w2 * -(p_target.max(1e-12).ln()))
}

/// Effective-number weights with `n_j` read from each class's frame count,
/// preserving the stats ranking order.
pub fn weights_from_stats(stats: &DatasetStats, params: ImbalanceParams) -> ClassWeights {
    let counts: Vec<(u32, u64)> = stats
        .per_class
        .iter()
        .map(|c| (c.class_id, c.frame_count))
        .collect();
    effective_number_weights(&counts, params)
}

/// CSV rendering with header `action_index,n_frames,w2`; `action_index` is
/// the 1-based entry position (the stats ranking when built from stats).
pub fn weights_to_csv(weights: &ClassWeights) -> String {
    let mut out = String::from("action_index,n_frames,w2\n");
    for (i, e) in weights.entries.iter().enumerate() {
        out.push_str(&format!("{},{},{}\n", i + 1, e.n_frames, e.w2));
    }
    out
}
