use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DataError, FrameRecord};
use crate::geometry::{Pose2D, Pose3D, PoseFrame, NUM_JOINTS};

/// Standard deviations below this are clamped (e.g. the hip, which is
/// always at the origin in hip-centered targets).
pub const STD_FLOOR: f64 = 1e-6;

/// Per-coordinate standardization for network inputs and targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean2d: Vec<f64>,
    pub std2d: Vec<f64>,
    pub mean3d: Vec<f64>,
    pub std3d: Vec<f64>,
    /// [`split_fingerprint`] of the records the stats were fitted on.
    pub fingerprint: String,
}

/// Order-independent digest of a record set's identity (subject, action,
/// frame, camera).
pub fn split_fingerprint(records: &[FrameRecord]) -> String {
    let mut keys: Vec<(u32, &str, u32, &str)> = records
        .iter()
        .map(|r| (r.subject, r.action.as_str(), r.frame, r.camera.id.as_str()))
        .collect();
    keys.sort_unstable();
    let mut h = Sha256::new();
    for (s, a, f, c) in keys {
        h.update(s.to_le_bytes());
        h.update(a.as_bytes());
        h.update([0]);
        h.update(f.to_le_bytes());
        h.update(c.as_bytes());
        h.update([0]);
    }
    hex::encode(&h.finalize()[..16])
}

fn mean_std(rows: &[Vec<f64>], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let mut mean = vec![0.0; dim];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for r in rows {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var.iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
    (mean, std)
}

/// Fits population mean/std per coordinate on the training split.
pub fn fit_norm_stats(train: &[FrameRecord]) -> Result<NormStats, DataError> {
    if train.is_empty() {
        return Err(DataError::EmptySplit);
    }
    let rows2: Vec<Vec<f64>> = train.iter().map(|r| r.pose2d.to_flat().to_vec()).collect();
    let rows3: Vec<Vec<f64>> = train
        .iter()
        .map(|r| r.ground_truth().map(|p| p.to_flat().to_vec()))
        .collect::<Result<_, _>>()?;
    let (mean2d, std2d) = mean_std(&rows2, 2 * NUM_JOINTS);
    let (mean3d, std3d) = mean_std(&rows3, 3 * NUM_JOINTS);
    Ok(NormStats {
        mean2d,
        std2d,
        mean3d,
        std3d,
        fingerprint: split_fingerprint(train),
    })
}

impl NormStats {
    pub fn normalize_2d(&self, p: &Pose2D) -> [f64; 2 * NUM_JOINTS] {
        let mut v = p.to_flat();
        for ((x, m), s) in v.iter_mut().zip(&self.mean2d).zip(&self.std2d) {
            *x = (*x - m) / s;
        }
        v
    }

    pub fn denormalize_2d(&self, v: &[f64]) -> Pose2D {
        let raw: Vec<f64> = v
            .iter()
            .zip(&self.mean2d)
            .zip(&self.std2d)
            .map(|((x, m), s)| x * s + m)
            .collect();
        Pose2D::from_flat(&raw).expect("32 values")
    }

    pub fn normalize_3d(&self, p: &Pose3D) -> [f64; 3 * NUM_JOINTS] {
        let mut v = p.to_flat();
        for ((x, m), s) in v.iter_mut().zip(&self.mean3d).zip(&self.std3d) {
            *x = (*x - m) / s;
        }
        v
    }

    pub fn denormalize_3d(&self, v: &[f64]) -> Pose3D {
        let raw: Vec<f64> = v
            .iter()
            .zip(&self.mean3d)
            .zip(&self.std3d)
            .map(|((x, m), s)| x * s + m)
            .collect();
        Pose3D::from_flat(&raw, PoseFrame::HipCentered).expect("48 values")
    }

    /// Fails unless these stats were fitted on exactly `train`.
    pub fn check_fitted_on(&self, train: &[FrameRecord]) -> Result<(), DataError> {
        let actual = split_fingerprint(train);
        if actual != self.fingerprint {
            return Err(DataError::StatsLeakage {
                fitted: self.fingerprint.clone(),
                actual,
            });
        }
        Ok(())
    }
}
