use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("duplicate frame {frame} in video {video_id:?}")]
    DuplicateFrame { video_id: String, frame: u32 },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("no class has {min_clips} or more clips")]
    NoSurvivingClasses { min_clips: usize },

    #[error("class {class_id} has {clips} clip(s); the split needs at least 2 per class")]
    ClassTooSmall { class_id: u32, clips: usize },

    #[error("detections span multiple frames: {0}")]
    MixedFrames(String),

    #[error("flags are not sorted by descending confidence at index {index}")]
    UnsortedConfidences { index: usize },

    #[error("true-positive count exceeds ground-truth total at index {index}")]
    ExcessTruePositives { index: usize },

    #[error("unknown class {class_id}")]
    UnknownClass { class_id: u32 },

    #[error("{samples} sample(s) cannot seed {k} cluster(s)")]
    TooFewSamples { samples: usize, k: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("bad grid format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
