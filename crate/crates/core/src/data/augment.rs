//! Synthetic cameras on the original camera ring, detector noise, and frame
//! rate subsampling.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{DataError, FrameRecord};
use crate::compute::RngStream;
use crate::geometry::{angular_distance_deg, project, to_camera_hip_centered, Camera, Pose2D, Pose3D, Vec3, NUM_JOINTS};

/// Detector noise standard deviation in pixels, shared or per joint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseSigma {
    Scalar(f64),
    PerJoint(Vec<f64>),
}

impl NoiseSigma {
    pub fn for_joint(&self, j: usize) -> f64 {
        match self {
            NoiseSigma::Scalar(s) => *s,
            NoiseSigma::PerJoint(v) => v[j],
        }
    }

    fn validate(&self) -> Result<(), DataError> {
        let ok = match self {
            NoiseSigma::Scalar(s) => *s >= 0.0,
            NoiseSigma::PerJoint(v) => v.len() == NUM_JOINTS && v.iter().all(|s| *s >= 0.0),
        };
        if ok {
            Ok(())
        } else {
            Err(DataError::ConfigInvalid(format!(
                "noise sigma must be a non-negative number or {NUM_JOINTS} of them"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    pub enabled: bool,
    /// Spacing of synthetic cameras on the ring.
    pub step_deg: f64,
    /// Synthetic cameras closest to each test camera that are removed.
    pub drop_nearest: usize,
    pub noise_sigma_px: NoiseSigma,
    pub noise_enabled: bool,
    /// Azimuth of the first synthetic camera.
    pub anchor_deg: f64,
    /// When set, synthetic cameras closer than this to a test camera are
    /// also removed.
    pub exclusion_deg: Option<f64>,
    /// Synthetic cameras this close to an original or test camera are
    /// duplicates and removed.
    pub coincidence_deg: f64,
    /// Ring center in world mm; inferred from the cameras when unset.
    pub ring_center: Option<Vec3>,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            step_deg: 15.0,
            drop_nearest: 2,
            noise_sigma_px: NoiseSigma::Scalar(5.0),
            noise_enabled: false,
            anchor_deg: 0.0,
            exclusion_deg: None,
            coincidence_deg: 0.5,
            ring_center: None,
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if !(self.step_deg > 0.0 && self.step_deg <= 360.0) {
            return Err(DataError::ConfigInvalid("augmentation.step_deg must be in (0, 360]".into()));
        }
        if !(self.coincidence_deg >= 0.0) {
            return Err(DataError::ConfigInvalid("augmentation.coincidence_deg must be >= 0".into()));
        }
        self.noise_sigma_px.validate()
    }

    /// Non-fatal configuration issues.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        let n = (360.0 / self.step_deg).round();
        if (n * self.step_deg - 360.0).abs() > 1e-9 {
            w.push(format!("augmentation.step_deg {} does not divide 360", self.step_deg));
        }
        w
    }

    /// Candidate azimuths in `[0, 360)` before any removal.
    pub fn ring_azimuths(&self) -> Vec<f64> {
        let n = (360.0 / self.step_deg).round().max(1.0) as usize;
        let mut out: Vec<f64> = (0..n)
            .map(|k| wrap_deg(self.anchor_deg + k as f64 * self.step_deg))
            .collect();
        out.sort_by(f64::total_cmp);
        out
    }

    /// Azimuths of the synthetic cameras that survive duplicate removal,
    /// the exclusion zone and the nearest-camera drop.
    pub fn synthetic_azimuths(&self, original_deg: &[f64], test_deg: &[f64]) -> Vec<f64> {
        let near = |a: f64, set: &[f64], d: f64| set.iter().any(|&b| angular_distance_deg(a, b) <= d);
        let mut keep: Vec<f64> = self
            .ring_azimuths()
            .into_iter()
            .filter(|&a| !near(a, original_deg, self.coincidence_deg) && !near(a, test_deg, self.coincidence_deg))
            .collect();
        if let Some(ex) = self.exclusion_deg {
            keep.retain(|&a| test_deg.iter().all(|&t| angular_distance_deg(a, t) >= ex - 1e-9));
        }
        for &t in test_deg {
            let mut by_dist: Vec<(f64, f64)> = keep.iter().map(|&a| (angular_distance_deg(a, t), a)).collect();
            by_dist.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));
            let dropped: Vec<f64> = by_dist.iter().take(self.drop_nearest).map(|p| p.1).collect();
            keep.retain(|a| !dropped.contains(a));
        }
        keep
    }
}

fn wrap_deg(a: f64) -> f64 {
    let w = a.rem_euclid(360.0);
    // Snap away float dust so ids and comparisons are stable.
    let s = (w * 1e6).round() / 1e6;
    if s >= 360.0 {
        0.0
    } else {
        s
    }
}

/// The vertical axis the cameras circle around.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraRing {
    /// A point on the axis (y = 0).
    pub pivot: Vec3,
    pub radius: f64,
}

impl CameraRing {
    pub fn azimuth(&self, cam: &Camera) -> f64 {
        wrap_deg(cam.azimuth_deg(self.pivot))
    }
}

/// Fits the circle through the camera centers in the ground (x, z) plane.
/// Needs at least three distinct, non-collinear cameras lying on a common
/// circle (1% radius tolerance).
pub fn infer_ring(cameras: &[&Camera]) -> Result<CameraRing, DataError> {
    let mut pts: Vec<[f64; 2]> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for c in cameras {
        if seen.insert(c.id.as_str()) {
            pts.push([c.center[0], c.center[2]]);
        }
    }
    if pts.len() < 3 {
        return Err(DataError::GeometryUnknown(format!(
            "need at least 3 cameras to infer the ring, have {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p[0]).sum::<f64>() / n;
    let mz = pts.iter().map(|p| p[1]).sum::<f64>() / n;
    // Algebraic fit x² + z² + D·x + E·z + F = 0 on centered coordinates.
    let mut ata = Matrix3::zeros();
    let mut atb = Vector3::zeros();
    for p in &pts {
        let (x, z) = (p[0] - mx, p[1] - mz);
        let row = Vector3::new(x, z, 1.0);
        ata += row * row.transpose();
        atb -= row * (x * x + z * z);
    }
    let sol = ata
        .lu()
        .solve(&atb)
        .ok_or_else(|| DataError::GeometryUnknown("camera centers are collinear".into()))?;
    let (cx, cz) = (-sol[0] / 2.0, -sol[1] / 2.0);
    let r2 = cx * cx + cz * cz - sol[2];
    if !(r2 > 0.0) || !r2.is_finite() {
        return Err(DataError::GeometryUnknown("camera centers do not form a ring".into()));
    }
    let radius = r2.sqrt();
    for p in &pts {
        let d = ((p[0] - mx - cx).powi(2) + (p[1] - mz - cz).powi(2)).sqrt();
        if (d - radius).abs() > 0.01 * radius {
            return Err(DataError::GeometryUnknown(format!(
                "camera at distance {d:.1} mm from the fitted ring center (radius {radius:.1} mm)"
            )));
        }
    }
    Ok(CameraRing {
        pivot: [cx + mx, 0.0, cz + mz],
        radius,
    })
}

/// Adds detector noise to every joint.
pub fn simulate_detector_noise(p: &Pose2D, sigma: &NoiseSigma, rng: &mut RngStream) -> Pose2D {
    let mut out = *p;
    for (j, uv) in out.joints.iter_mut().enumerate() {
        let s = sigma.for_joint(j);
        uv[0] += s * rng.normal();
        uv[1] += s * rng.normal();
    }
    out
}

/// Per-joint detector sigma fitted from the residual between stored
/// detections and the reprojected ground truth.
pub fn fit_noise_sigmas(records: &[FrameRecord]) -> Result<NoiseSigma, DataError> {
    let mut sq = [0.0; NUM_JOINTS];
    let mut n = 0usize;
    for r in records {
        let Some(world) = r.world_pose() else { continue };
        let clean = project(&r.camera, &world)?;
        for j in 0..NUM_JOINTS {
            let du = r.pose2d.joints[j][0] - clean.joints[j][0];
            let dv = r.pose2d.joints[j][1] - clean.joints[j][1];
            sq[j] += du * du + dv * dv;
        }
        n += 1;
    }
    if n == 0 {
        return Err(DataError::EmptySplit);
    }
    Ok(NoiseSigma::PerJoint(
        sq.iter().map(|s| (s / (2.0 * n as f64)).sqrt()).collect(),
    ))
}

/// Keeps every `⌊source_fps / 10⌋`-th frame.
pub fn subsample_10fps(records: Vec<FrameRecord>, source_fps: f64) -> Result<Vec<FrameRecord>, DataError> {
    if !source_fps.is_finite() || source_fps < 10.0 {
        return Err(DataError::BadFps(source_fps));
    }
    let step = (source_fps / 10.0).floor() as u32;
    Ok(records.into_iter().filter(|r| r.frame % step == 0).collect())
}

/// Returns the input records followed by views of the same poses from
/// synthetic cameras on the ring. `test_cameras` may be absent from
/// `records`; they only steer which synthetic cameras are removed.
pub fn augment_cameras(
    records: &[FrameRecord],
    cfg: &AugmentationConfig,
    test_cameras: &[Camera],
    rng: &RngStream,
) -> Result<Vec<FrameRecord>, DataError> {
    cfg.validate()?;
    if !cfg.enabled || records.is_empty() {
        return Ok(records.to_vec());
    }
    let mut originals: BTreeMap<&str, &Camera> = BTreeMap::new();
    for r in records {
        originals.entry(r.camera.id.as_str()).or_insert(&r.camera);
    }
    let ring = match cfg.ring_center {
        Some(c) => CameraRing {
            pivot: [c[0], 0.0, c[2]],
            radius: 0.0,
        },
        None => {
            let all: Vec<&Camera> = originals.values().copied().chain(test_cameras).collect();
            infer_ring(&all)?
        }
    };
    let orig_az: Vec<(f64, &Camera)> = originals.values().map(|c| (ring.azimuth(c), *c)).collect();
    let test_az: Vec<f64> = test_cameras.iter().map(|c| ring.azimuth(c)).collect();
    let orig_deg: Vec<f64> = orig_az.iter().map(|p| p.0).collect();

    // Each synthetic camera is the nearest original swung to its azimuth.
    let synth_cams: Vec<Camera> = cfg
        .synthetic_azimuths(&orig_deg, &test_az)
        .into_iter()
        .map(|az| {
            let (src_az, src) = orig_az
                .iter()
                .min_by(|a, b| angular_distance_deg(a.0, az).total_cmp(&angular_distance_deg(b.0, az)))
                .expect("non-empty");
            src.rotated_about_vertical(az - src_az, ring.pivot, format!("syn{az}"))
        })
        .collect();

    // One world pose per captured instant, in first-seen order.
    let mut worlds: Vec<(&FrameRecord, Pose3D)> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for r in records {
        if seen.insert(r.frame_key()) {
            let w = r.world_pose().ok_or_else(|| {
                DataError::GeometryUnknown(format!(
                    "record (subject {}, {}, frame {}) has no recoverable world pose",
                    r.subject, r.action, r.frame
                ))
            })?;
            worlds.push((r, w));
        }
    }

    let mut out = Vec::with_capacity(records.len() + worlds.len() * synth_cams.len());
    out.extend_from_slice(records);
    for (i, (src, world)) in worlds.iter().enumerate() {
        for (k, cam) in synth_cams.iter().enumerate() {
            let mut pose2d = project(cam, world)?;
            if cfg.noise_enabled {
                let mut r = rng.substream_path(&[i as u64, k as u64]);
                pose2d = simulate_detector_noise(&pose2d, &cfg.noise_sigma_px, &mut r);
            }
            out.push(FrameRecord {
                subject: src.subject,
                action: src.action.clone(),
                frame: src.frame,
                camera: cam.clone(),
                pose2d,
                pose3d: Some(to_camera_hip_centered(cam, world)),
                hip_world: Some(world.hip()),
                synthetic_cam: true,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SynthConfig};

    #[test]
    fn ring_candidates() {
        let cfg = AugmentationConfig::default();
        assert_eq!(cfg.ring_azimuths().len(), 24);
        assert!(cfg.warnings().is_empty());
        let odd = AugmentationConfig {
            step_deg: 35.0,
            ..cfg
        };
        assert_eq!(odd.warnings().len(), 1);
    }

    #[test]
    fn step_90_on_square_adds_nothing() {
        let cfg = AugmentationConfig {
            step_deg: 90.0,
            drop_nearest: 0,
            ..AugmentationConfig::default()
        };
        assert!(cfg.synthetic_azimuths(&[0.0, 90.0, 180.0, 270.0], &[]).is_empty());
    }

    #[test]
    fn ring_is_recovered_from_partial_arc() {
        let synth = SynthConfig::default();
        let cams = synth.cameras();
        let refs: Vec<&Camera> = cams.iter().take(4).collect();
        let ring = infer_ring(&refs).unwrap();
        assert!(ring.pivot[0].abs() < 1e-6 && ring.pivot[2].abs() < 1e-6);
        assert!((ring.radius - synth.camera_radius_mm).abs() < 1e-6);
        assert!(matches!(infer_ring(&refs[..2]), Err(DataError::GeometryUnknown(_))));
    }

    #[test]
    fn subsampling() {
        let recs = generate_synthetic(&SynthConfig {
            subjects: vec![1],
            n_actions: 1,
            frames_per_action: 20,
            n_cameras: 1,
            ..SynthConfig::default()
        })
        .unwrap();
        assert_eq!(subsample_10fps(recs.clone(), 10.0).unwrap().len(), 20);
        assert_eq!(subsample_10fps(recs.clone(), 50.0).unwrap().len(), 4);
        assert_eq!(subsample_10fps(recs.clone(), 59.9).unwrap().len(), 4);
        assert!(matches!(subsample_10fps(recs, 9.0), Err(DataError::BadFps(_))));
    }

    #[test]
    fn zero_sigma_is_identity() {
        let p = Pose2D {
            joints: [[3.0, 4.0]; NUM_JOINTS],
        };
        let mut rng = RngStream::new(1);
        assert_eq!(simulate_detector_noise(&p, &NoiseSigma::Scalar(0.0), &mut rng), p);
    }

    #[test]
    fn disabled_augmentation_is_passthrough() {
        let recs = generate_synthetic(&SynthConfig {
            subjects: vec![1],
            n_actions: 1,
            frames_per_action: 2,
            ..SynthConfig::default()
        })
        .unwrap();
        let cfg = AugmentationConfig {
            enabled: false,
            ..AugmentationConfig::default()
        };
        assert_eq!(augment_cameras(&recs, &cfg, &[], &RngStream::new(0)).unwrap(), recs);
    }
}
