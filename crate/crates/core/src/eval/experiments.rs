use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{median, predict_records, EvalError};
use crate::compute::RngStream;
use crate::data::{augment_cameras, infer_ring, AugmentationConfig, FrameRecord, PairBatch};
use crate::geometry::{angular_distance_deg, rot_vertical, Camera, Pose3D, Rotation3};
use crate::losses::embedding_distances;
use crate::model::{rotate_embedding_each, LiftingModel};

/// Summary of `‖R₂R₁⁻¹h₁ − h₂‖_F` over a set of pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquivarianceStats {
    pub mean: f64,
    pub median: f64,
    /// `mean / 2√M`, the fraction of the largest possible distance.
    pub mean_normalized: f64,
    pub median_normalized: f64,
    pub n_pairs: usize,
}

/// Inference-mode equivariance residual over every pair of every batch.
pub fn equivariance_error(model: &LiftingModel, batches: &[PairBatch]) -> Result<EquivarianceStats, EvalError> {
    let per_batch: Vec<Result<Vec<f64>, EvalError>> = batches
        .par_iter()
        .map(|b| {
            let h1 = model.encode(&b.inputs_a).map_err(crate::model::ModelError::from)?;
            let h2 = model.encode(&b.inputs_b).map_err(crate::model::ModelError::from)?;
            let rots: Vec<Rotation3> = b.siamese.iter().map(|t| t.rel_rot).collect();
            Ok(embedding_distances(&h1, &h2, &rots).map_err(crate::model::ModelError::from)?)
        })
        .collect();
    let mut d = Vec::new();
    for r in per_batch {
        d.extend(r?);
    }
    if d.is_empty() {
        return Err(EvalError::Empty);
    }
    let bound = 2.0 * (model.m() as f64).sqrt();
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    let med = median(&d);
    Ok(EquivarianceStats {
        mean,
        median: med,
        mean_normalized: mean / bound,
        median_normalized: med / bound,
        n_pairs: d.len(),
    })
}

/// Error of `g(Q·f(P₂D))` against `Q·P₃D` at one rotation angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationRow {
    pub angle_deg: f64,
    pub mean_mpjpe: f64,
    pub median_mpjpe: f64,
}

/// The world-vertical rotation by `angle_deg` expressed in the camera frame.
fn camera_frame_vertical(cam: &Camera, angle_deg: f64) -> Rotation3 {
    if angle_deg == 0.0 {
        return Rotation3::identity();
    }
    cam.rot.compose(&rot_vertical(angle_deg)).compose(&cam.rot.transpose())
}

/// Rotates each embedding about the world vertical axis (expressed in its
/// camera's frame), decodes, and compares to the equally rotated ground
/// truth.
pub fn embedding_rotation_experiment(
    model: &LiftingModel,
    records: &[FrameRecord],
    angles_deg: &[f64],
) -> Result<Vec<RotationRow>, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    let x = model.normalize_inputs(&records.iter().map(|r| r.pose2d).collect::<Vec<_>>())?;
    let h = model.encode(&x).map_err(crate::model::ModelError::from)?;
    let gts: Vec<Pose3D> = records
        .iter()
        .map(|r| r.ground_truth().copied())
        .collect::<Result<_, _>>()?;
    angles_deg
        .iter()
        .map(|&a| {
            let rots: Vec<Rotation3> = records.iter().map(|r| camera_frame_vertical(&r.camera, a)).collect();
            let hr = rotate_embedding_each(&rots, &h);
            let y = model.decode(&hr).map_err(crate::model::ModelError::from)?;
            let preds = model.denormalize_outputs(&y)?;
            let errs: Vec<f64> = preds
                .iter()
                .zip(&gts)
                .zip(&rots)
                .map(|((p, g), q)| p.mean_joint_distance(&g.rotated(q)))
                .collect();
            Ok(RotationRow {
                angle_deg: a,
                mean_mpjpe: errs.iter().sum::<f64>() / errs.len() as f64,
                median_mpjpe: median(&errs),
            })
        })
        .collect()
}

/// Which model is trained at a sweep point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariant {
    Siamese,
    Baseline,
}

impl SweepVariant {
    pub fn name(self) -> &'static str {
        match self {
            SweepVariant::Siamese => "siamese",
            SweepVariant::Baseline => "baseline",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub distance_deg: f64,
    pub variant: SweepVariant,
    pub seed: u64,
    pub mpjpe: f64,
}

/// Training records for one sweep distance: original cameras at least
/// `distance_deg` from the test camera, plus a ring of synthetic cameras
/// anchored at the test camera with everything closer than `distance_deg`
/// removed. A distance of 0 keeps the test camera itself.
pub fn sweep_training_set(
    train: &[FrameRecord],
    test_camera: &Camera,
    distance_deg: f64,
    base: &AugmentationConfig,
    rng: &RngStream,
) -> Result<Vec<FrameRecord>, EvalError> {
    let mut cams: Vec<&Camera> = train.iter().map(|r| &r.camera).collect();
    cams.push(test_camera);
    let ring = infer_ring(&cams)?;
    let test_az = ring.azimuth(test_camera);
    let kept: Vec<FrameRecord> = train
        .iter()
        .filter(|r| angular_distance_deg(ring.azimuth(&r.camera), test_az) >= distance_deg - 1e-9)
        .cloned()
        .collect();
    if kept.is_empty() {
        return Err(EvalError::Other(format!(
            "no original camera is at least {distance_deg} degrees from the test camera"
        )));
    }
    let cfg = AugmentationConfig {
        enabled: true,
        anchor_deg: test_az,
        drop_nearest: 0,
        exclusion_deg: Some(distance_deg),
        ring_center: Some(ring.pivot),
        ..base.clone()
    };
    let test_for_aug: Vec<Camera> = if distance_deg > 0.0 {
        vec![test_camera.clone()]
    } else {
        Vec::new()
    };
    Ok(augment_cameras(&kept, &cfg, &test_for_aug, rng)?)
}

/// For every distance, variant and seed, trains through `train_fn` on the
/// distance's training set and records the held-out-camera MPJPE it
/// returns. Runs sequentially in a fixed order.
pub fn aug_distance_sweep<F>(
    mut train_fn: F,
    train: &[FrameRecord],
    test: &[FrameRecord],
    test_camera: &Camera,
    distances_deg: &[f64],
    variants: &[SweepVariant],
    seeds: &[u64],
    base: &AugmentationConfig,
) -> Result<Vec<SweepRow>, EvalError>
where
    F: FnMut(&[FrameRecord], &[FrameRecord], SweepVariant, u64) -> Result<f64, EvalError>,
{
    let mut rows = Vec::new();
    for &d in distances_deg {
        let set = sweep_training_set(train, test_camera, d, base, &RngStream::new(0).substream(d.to_bits()))?;
        for &v in variants {
            for &s in seeds {
                rows.push(SweepRow {
                    distance_deg: d,
                    variant: v,
                    seed: s,
                    mpjpe: train_fn(&set, test, v, s)?,
                });
            }
        }
    }
    Ok(rows)
}

/// Plain held-out MPJPE of a model on records, for sweep callbacks.
pub fn plain_mpjpe(model: &LiftingModel, records: &[FrameRecord]) -> Result<f64, EvalError> {
    let preds = predict_records(model, records)?;
    let gts: Vec<Pose3D> = records
        .iter()
        .map(|r| r.ground_truth().copied())
        .collect::<Result<_, _>>()?;
    super::mpjpe(&preds, &gts)
}
