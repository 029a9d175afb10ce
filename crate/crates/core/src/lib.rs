//! Toolkit for scoring spatiotemporal action detectors and preparing their
//! datasets: frame-level detection metrics (per-class AP, frame-mAP,
//! localization recall, classification accuracy), K-means anchor-box
//! clustering, effective-number class rebalancing, annotation ingestion with
//! dataset statistics, stratified train/test splitting, and YOLO-style grid
//! decoding with non-maximum suppression.
//!
//! Everything here is deterministic: operations are pure functions of their
//! inputs and an explicit seed, so identical invocations reproduce identical
//! outputs byte for byte.

pub mod anchors;
pub mod annot;
pub mod decode;
pub mod error;
pub mod eval;
pub mod geom;
pub mod imbalance;

pub use error::{Error, Result};
