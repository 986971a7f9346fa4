//! Dataset records, JSONL I/O, normalization statistics, synthetic motion
//! capture, camera-ring augmentation, protocol splits and pair sampling.

mod augment;
mod norm;
mod pairs;
mod record;
mod split;
mod synth;

use thiserror::Error;

use crate::geometry::GeometryError;

pub use augment::{
    augment_cameras, fit_noise_sigmas, infer_ring, simulate_detector_noise, subsample_10fps, AugmentationConfig,
    CameraRing, NoiseSigma,
};
pub use norm::{fit_norm_stats, split_fingerprint, NormStats, STD_FLOOR};
pub use pairs::{sample_pairs, PairBatch, PairIndex, PairSampling};
pub use record::{read_dataset, write_dataset, FrameRecord, RecordReader, SCHEMA_VERSION};
pub use split::{split_protocol, Protocol, SubjectSplit};
pub use synth::{
    generate_synthetic, joint_names, SynthConfig, ACTION_NAMES, DEFAULT_ANGLE_RANGES_DEG, DEFAULT_BONE_LENGTHS_MM,
    JOINT_PARENTS,
};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: schema version {found}, expected {expected}")]
    SchemaVersionMismatch { line: usize, found: u32, expected: u32 },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot fit statistics on an empty split")]
    EmptySplit,
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("camera ring geometry unknown: {0}")]
    GeometryUnknown(String),
    #[error("bad source frame rate {0} (needs a finite rate of at least 10 fps)")]
    BadFps(f64),
    #[error("unknown camera {0:?}")]
    UnknownCamera(String),
    #[error("no frame is visible from two or more cameras")]
    InsufficientViews,
    #[error("record (subject {subject}, {action}, frame {frame}) has no ground-truth 3D pose")]
    MissingGroundTruth { subject: u32, action: String, frame: u32 },
    #[error("normalization statistics were fitted on {fitted} but used with {actual}")]
    StatsLeakage { fitted: String, actual: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}
