//! JSON Lines dataset format.
//!
//! One record per line, fields in this order:
//!
//! | field           | type                 | unit                              |
//! |-----------------|----------------------|-----------------------------------|
//! | `schema`        | u32                  | always [`SCHEMA_VERSION`]         |
//! | `subject`       | u32                  |                                   |
//! | `action`        | string               |                                   |
//! | `frame`         | u32                  | index at the source frame rate    |
//! | `camera`        | object               | see below                         |
//! | `pose2d`        | 32 numbers           | px, joint-major `u0 v0 u1 v1 ...` |
//! | `pose3d`        | 48 numbers or null   | mm, hip-centered camera frame     |
//! | `hip_world`     | 3 numbers or null    | mm, world frame                   |
//! | `synthetic_cam` | bool                 |                                   |
//!
//! `camera` holds `id` (string), `rot` (9 numbers, row-major world→camera),
//! `center` (3 numbers, mm), `focal` and `principal` (2 numbers each, px).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::geometry::{Camera, Pose2D, Pose3D, PoseFrame, Rotation3, Vec3, NUM_JOINTS};

pub const SCHEMA_VERSION: u32 = 1;

/// One observation: a detection, the camera that made it and (when known)
/// the hip-centered ground truth in that camera's frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub subject: u32,
    pub action: String,
    pub frame: u32,
    pub camera: Camera,
    pub pose2d: Pose2D,
    pub pose3d: Option<Pose3D>,
    /// World position of the hip, needed to re-project under new cameras.
    pub hip_world: Option<Vec3>,
    pub synthetic_cam: bool,
}

impl FrameRecord {
    pub fn ground_truth(&self) -> Result<&Pose3D, DataError> {
        self.pose3d.as_ref().ok_or_else(|| DataError::MissingGroundTruth {
            subject: self.subject,
            action: self.action.clone(),
            frame: self.frame,
        })
    }

    /// Key shared by every view of the same captured instant.
    pub fn frame_key(&self) -> (u32, &str, u32) {
        (self.subject, self.action.as_str(), self.frame)
    }

    /// The ground-truth pose in world coordinates, when recoverable.
    pub fn world_pose(&self) -> Option<Pose3D> {
        let hip = self.hip_world?;
        let p = self.pose3d.as_ref()?;
        let back = self.camera.rot.transpose();
        let joints = p.joints.map(|j| {
            let w = back.apply(j);
            [w[0] + hip[0], w[1] + hip[1], w[2] + hip[2]]
        });
        Some(Pose3D::new(joints, PoseFrame::World))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraLine {
    id: String,
    rot: Vec<f64>,
    center: Vec3,
    focal: [f64; 2],
    principal: [f64; 2],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    schema: u32,
    subject: u32,
    action: String,
    frame: u32,
    camera: CameraLine,
    pose2d: Vec<f64>,
    pose3d: Option<Vec<f64>>,
    hip_world: Option<Vec3>,
    synthetic_cam: bool,
}

impl From<&FrameRecord> for RecordLine {
    fn from(r: &FrameRecord) -> Self {
        RecordLine {
            schema: SCHEMA_VERSION,
            subject: r.subject,
            action: r.action.clone(),
            frame: r.frame,
            camera: CameraLine {
                id: r.camera.id.clone(),
                rot: r.camera.rot.to_row_vec(),
                center: r.camera.center,
                focal: r.camera.focal,
                principal: r.camera.principal,
            },
            pose2d: r.pose2d.to_flat().to_vec(),
            pose3d: r.pose3d.map(|p| p.to_flat().to_vec()),
            hip_world: r.hip_world,
            synthetic_cam: r.synthetic_cam,
        }
    }
}

fn parse_line(text: &str, line: usize) -> Result<FrameRecord, DataError> {
    let perr = |message: String| DataError::Parse { line, message };
    let raw: RecordLine = serde_json::from_str(text).map_err(|e| perr(e.to_string()))?;
    if raw.schema != SCHEMA_VERSION {
        return Err(DataError::SchemaVersionMismatch {
            line,
            found: raw.schema,
            expected: SCHEMA_VERSION,
        });
    }
    let rot = Rotation3::from_row_slice(&raw.camera.rot).map_err(|e| perr(format!("camera.rot: {e}")))?;
    let camera = Camera {
        id: raw.camera.id,
        rot,
        center: raw.camera.center,
        focal: raw.camera.focal,
        principal: raw.camera.principal,
    };
    if !camera.focal.iter().all(|f| *f > 0.0) {
        return Err(perr("camera.focal must be positive".into()));
    }
    let pose2d = Pose2D::from_flat(&raw.pose2d)
        .ok_or_else(|| perr(format!("pose2d needs {} values, got {}", 2 * NUM_JOINTS, raw.pose2d.len())))?;
    let pose3d = match raw.pose3d {
        None => None,
        Some(v) => Some(
            Pose3D::from_flat(&v, PoseFrame::HipCentered)
                .ok_or_else(|| perr(format!("pose3d needs {} values, got {}", 3 * NUM_JOINTS, v.len())))?,
        ),
    };
    Ok(FrameRecord {
        subject: raw.subject,
        action: raw.action,
        frame: raw.frame,
        camera,
        pose2d,
        pose3d,
        hip_world: raw.hip_world,
        synthetic_cam: raw.synthetic_cam,
    })
}

/// Streams records from a JSONL source in file order. Blank lines are
/// skipped; line numbers in errors are 1-based.
pub struct RecordReader<R> {
    lines: std::io::Lines<R>,
    line: usize,
}

impl<R: BufRead> RecordReader<R> {
    pub fn new(reader: R) -> Self {
        Self {
            lines: reader.lines(),
            line: 0,
        }
    }
}

impl<R: BufRead> Iterator for RecordReader<R> {
    type Item = Result<FrameRecord, DataError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let text = match self.lines.next()? {
                Ok(t) => t,
                Err(e) => return Some(Err(e.into())),
            };
            self.line += 1;
            if text.trim().is_empty() {
                continue;
            }
            return Some(parse_line(&text, self.line));
        }
    }
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<FrameRecord>, DataError> {
    let file = File::open(path)?;
    RecordReader::new(BufReader::new(file)).collect()
}

/// Serializes records to any writer, one JSON object per line.
pub fn write_records<W: Write>(records: &[FrameRecord], mut w: W) -> Result<(), DataError> {
    for r in records {
        serde_json::to_writer(&mut w, &RecordLine::from(r)).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the dataset atomically (temporary file, then rename).
pub fn write_dataset(records: &[FrameRecord], path: impl AsRef<Path>) -> Result<(), DataError> {
    crate::io::write_atomic(path.as_ref(), |f| write_records(records, BufWriter::new(f)))
}
