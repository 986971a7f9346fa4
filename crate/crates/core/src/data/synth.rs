//! Procedural motion capture: a 16-joint skeleton driven by smooth joint
//! angle trajectories, observed by a ring of level-ish cameras.

use serde::{Deserialize, Serialize};

use super::{simulate_detector_noise, DataError, FrameRecord, NoiseSigma};
use crate::compute::RngStream;
use crate::geometry::{
    project, rot_vertical, to_camera_hip_centered, Camera, Pose3D, PoseFrame, Rotation3, Vec3, NUM_JOINTS,
};

/// Parent of each joint; the hip (0) is the root.
pub const JOINT_PARENTS: [usize; NUM_JOINTS] = [0, 0, 1, 2, 0, 4, 5, 0, 7, 8, 8, 10, 11, 8, 13, 14];

const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "Hip", "RHip", "RKnee", "RAnkle", "LHip", "LKnee", "LAnkle", "Spine", "Thorax", "Head", "LShoulder", "LElbow",
    "LWrist", "RShoulder", "RElbow", "RWrist",
];

pub fn joint_names() -> &'static [&'static str; NUM_JOINTS] {
    &JOINT_NAMES
}

/// Rest direction of the bone ending at each joint, in the parent frame.
/// The subject faces +z with y up, so its right side is −x.
const BONE_DIRS: [Vec3; NUM_JOINTS] = [
    [0.0, 0.0, 0.0],
    [-1.0, 0.0, 0.0],
    [0.0, -1.0, 0.0],
    [0.0, -1.0, 0.0],
    [1.0, 0.0, 0.0],
    [0.0, -1.0, 0.0],
    [0.0, -1.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 1.0, 0.0],
    [1.0, 0.0, 0.0],
    [0.0, -1.0, 0.0],
    [0.0, -1.0, 0.0],
    [-1.0, 0.0, 0.0],
    [0.0, -1.0, 0.0],
    [0.0, -1.0, 0.0],
];

/// Bone length (mm) of the bone ending at each joint. Entry 0 is unused.
pub const DEFAULT_BONE_LENGTHS_MM: [f64; NUM_JOINTS] = [
    0.0, 130.0, 450.0, 440.0, 130.0, 450.0, 440.0, 240.0, 250.0, 190.0, 150.0, 280.0, 250.0, 150.0, 280.0, 250.0,
];

/// `[lo, hi]` degrees for rotations about the local x, y and z axes of the
/// bone ending at each joint. Joint 0 is the whole-body orientation.
pub const DEFAULT_ANGLE_RANGES_DEG: [[[f64; 2]; 3]; NUM_JOINTS] = [
    [[-8.0, 8.0], [-25.0, 25.0], [-5.0, 5.0]],
    [[0.0, 0.0], [0.0, 0.0], [0.0, 0.0]],
    [[-70.0, 25.0], [-10.0, 10.0], [-20.0, 5.0]],
    [[0.0, 100.0], [0.0, 0.0], [0.0, 0.0]],
    [[0.0, 0.0], [0.0, 0.0], [0.0, 0.0]],
    [[-70.0, 25.0], [-10.0, 10.0], [-5.0, 20.0]],
    [[0.0, 100.0], [0.0, 0.0], [0.0, 0.0]],
    [[-10.0, 35.0], [-20.0, 20.0], [-10.0, 10.0]],
    [[-5.0, 15.0], [-15.0, 15.0], [-5.0, 5.0]],
    [[-20.0, 30.0], [-40.0, 40.0], [-10.0, 10.0]],
    [[0.0, 0.0], [0.0, 0.0], [0.0, 0.0]],
    [[-120.0, 40.0], [-30.0, 30.0], [0.0, 90.0]],
    [[-130.0, 0.0], [0.0, 0.0], [0.0, 0.0]],
    [[0.0, 0.0], [0.0, 0.0], [0.0, 0.0]],
    [[-120.0, 40.0], [-30.0, 30.0], [-90.0, 0.0]],
    [[-130.0, 0.0], [0.0, 0.0], [0.0, 0.0]],
];

pub const ACTION_NAMES: [&str; 15] = [
    "Directions",
    "Discussion",
    "Eating",
    "Greeting",
    "Phoning",
    "Photo",
    "Posing",
    "Purchases",
    "Sitting",
    "SittingDown",
    "Smoking",
    "Waiting",
    "WalkDog",
    "Walking",
    "WalkTogether",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub subjects: Vec<u32>,
    pub n_actions: usize,
    pub frames_per_action: usize,
    pub source_fps: f64,
    pub bone_lengths_mm: Vec<f64>,
    pub angle_ranges_deg: Vec<[[f64; 2]; 3]>,
    /// Per-subject uniform bone scale drawn from `[1 − s, 1 + s]`.
    pub subject_scale_range: f64,
    /// Hip height above the floor for a unit-scale subject.
    pub hip_height_mm: f64,
    pub camera_radius_mm: f64,
    pub camera_height_mm: f64,
    /// Height of the point every camera looks at.
    pub look_at_height_mm: f64,
    pub n_cameras: usize,
    pub focal_px: [f64; 2],
    pub principal_px: [f64; 2],
    /// Detector noise added to every generated detection (0 = exact).
    pub noise_sigma_px: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            subjects: vec![1, 5, 6, 7, 8, 9, 11],
            n_actions: 4,
            frames_per_action: 80,
            source_fps: 10.0,
            bone_lengths_mm: DEFAULT_BONE_LENGTHS_MM.to_vec(),
            angle_ranges_deg: DEFAULT_ANGLE_RANGES_DEG.to_vec(),
            subject_scale_range: 0.06,
            hip_height_mm: 950.0,
            camera_radius_mm: 4500.0,
            camera_height_mm: 1400.0,
            look_at_height_mm: 1000.0,
            n_cameras: 9,
            focal_px: [1150.0, 1150.0],
            principal_px: [500.0, 500.0],
            noise_sigma_px: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Same config with every angle range collapsed to its lower bound and
    /// no per-subject scaling, so every frame is the same canonical pose.
    pub fn frozen(mut self) -> Self {
        for joint in self.angle_ranges_deg.iter_mut() {
            for r in joint.iter_mut() {
                r[1] = r[0];
            }
        }
        self.subject_scale_range = 0.0;
        self
    }

    /// Longest root-to-joint chain at the largest subject scale.
    pub fn max_pose_extent_mm(&self) -> f64 {
        let mut reach = [0.0f64; NUM_JOINTS];
        for j in 1..NUM_JOINTS {
            reach[j] = reach[JOINT_PARENTS[j]] + self.bone_lengths_mm.get(j).copied().unwrap_or(0.0);
        }
        reach.iter().cloned().fold(0.0, f64::max) * (1.0 + self.subject_scale_range)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::ConfigInvalid(m));
        if self.subjects.is_empty() {
            return bad("synth.subjects is empty".into());
        }
        if self.n_actions == 0 || self.n_actions > ACTION_NAMES.len() {
            return bad(format!("synth.n_actions must be in 1..={}", ACTION_NAMES.len()));
        }
        if self.frames_per_action == 0 {
            return bad("synth.frames_per_action must be positive".into());
        }
        if !(self.source_fps > 0.0) {
            return bad("synth.source_fps must be positive".into());
        }
        if self.bone_lengths_mm.len() != NUM_JOINTS || self.angle_ranges_deg.len() != NUM_JOINTS {
            return bad(format!("bone and angle tables need {NUM_JOINTS} entries"));
        }
        if self.bone_lengths_mm[1..].iter().any(|l| !(*l > 0.0)) {
            return bad("bone lengths must be positive".into());
        }
        if self.angle_ranges_deg.iter().flatten().any(|r| !(r[0] <= r[1])) {
            return bad("angle ranges need lo <= hi".into());
        }
        if !(0.0..1.0).contains(&self.subject_scale_range) {
            return bad("synth.subject_scale_range must be in [0, 1)".into());
        }
        if self.n_cameras == 0 {
            return bad("synth.n_cameras must be positive".into());
        }
        if self.focal_px.iter().any(|f| !(*f > 0.0)) {
            return bad("synth.focal_px must be positive".into());
        }
        if !(self.noise_sigma_px >= 0.0) {
            return bad("synth.noise_sigma_px must be non-negative".into());
        }
        let extent = self.max_pose_extent_mm();
        if !(self.camera_radius_mm > extent) {
            return bad(format!(
                "camera radius {} mm does not exceed the pose extent {extent:.0} mm",
                self.camera_radius_mm
            ));
        }
        Ok(())
    }

    /// The evenly spaced camera ring; camera `k` sits at azimuth `360·k/n`.
    pub fn cameras(&self) -> Vec<Camera> {
        (0..self.n_cameras)
            .map(|k| {
                let az = 360.0 * k as f64 / self.n_cameras as f64;
                let c = rot_vertical(az).apply([0.0, 0.0, self.camera_radius_mm]);
                Camera::look_at(
                    format!("cam{k}"),
                    [c[0], self.camera_height_mm, c[2]],
                    [0.0, self.look_at_height_mm, 0.0],
                    self.focal_px,
                    self.principal_px,
                )
            })
            .collect()
    }
}

/// One sinusoidal angle trajectory inside `[lo, hi]`.
#[derive(Debug, Clone, Copy)]
struct Trajectory {
    lo: f64,
    hi: f64,
    freq_hz: f64,
    phase: f64,
}

impl Trajectory {
    fn at(&self, t: f64) -> f64 {
        let s = 0.5 + 0.5 * (std::f64::consts::TAU * self.freq_hz * t + self.phase).sin();
        self.lo + (self.hi - self.lo) * s
    }
}

fn local_rotation(angles_deg: [f64; 3]) -> Rotation3 {
    let rx = Rotation3::from_axis_angle([1.0, 0.0, 0.0], angles_deg[0].to_radians());
    let ry = Rotation3::from_axis_angle([0.0, 1.0, 0.0], angles_deg[1].to_radians());
    let rz = Rotation3::from_axis_angle([0.0, 0.0, 1.0], angles_deg[2].to_radians());
    rz.compose(&rx).compose(&ry)
}

/// Forward kinematics for one set of joint angles.
fn skeleton(angles: &[[f64; 3]; NUM_JOINTS], bones: &[f64], hip: Vec3) -> Pose3D {
    let mut rot = [Rotation3::identity(); NUM_JOINTS];
    let mut pos = [[0.0; 3]; NUM_JOINTS];
    rot[0] = local_rotation(angles[0]);
    pos[0] = hip;
    for j in 1..NUM_JOINTS {
        let p = JOINT_PARENTS[j];
        rot[j] = rot[p].compose(&local_rotation(angles[j]));
        let off = rot[j].apply(BONE_DIRS[j].map(|d| d * bones[j]));
        pos[j] = [pos[p][0] + off[0], pos[p][1] + off[1], pos[p][2] + off[2]];
    }
    Pose3D::new(pos, PoseFrame::World)
}

/// World-frame poses for one subject/action clip.
fn clip(cfg: &SynthConfig, root: &RngStream, subject: u32, action: usize) -> Vec<Pose3D> {
    // Action style (sub-ranges, tempo) is shared by all subjects; phases and
    // body scale are per subject.
    let mut action_rng = root.substream_path(&[1, action as u64]);
    let mut subject_rng = root.substream_path(&[2, subject as u64]);
    let mut clip_rng = root.substream_path(&[3, subject as u64, action as u64]);

    let scale = 1.0 + cfg.subject_scale_range * (2.0 * subject_rng.uniform() - 1.0);
    let bones: Vec<f64> = cfg.bone_lengths_mm.iter().map(|l| l * scale).collect();

    let mut traj = [[Trajectory {
        lo: 0.0,
        hi: 0.0,
        freq_hz: 0.0,
        phase: 0.0,
    }; 3]; NUM_JOINTS];
    for (j, joint) in traj.iter_mut().enumerate() {
        for (a, t) in joint.iter_mut().enumerate() {
            let [lo, hi] = cfg.angle_ranges_deg[j][a];
            let u1 = action_rng.uniform();
            let u2 = action_rng.uniform();
            let (a_lo, a_hi) = (u1.min(u2), u1.max(u2));
            // Each action covers at least 40% of the full range.
            let width = (a_hi - a_lo).max(0.4);
            let start = a_lo.min(1.0 - width);
            *t = Trajectory {
                lo: lo + (hi - lo) * start,
                hi: lo + (hi - lo) * (start + width),
                freq_hz: 0.15 + 0.5 * action_rng.uniform(),
                phase: std::f64::consts::TAU * clip_rng.uniform(),
            };
        }
    }

    (0..cfg.frames_per_action)
        .map(|f| {
            let t = f as f64 / cfg.source_fps;
            let mut angles = [[0.0; 3]; NUM_JOINTS];
            for (j, joint) in angles.iter_mut().enumerate() {
                for (a, v) in joint.iter_mut().enumerate() {
                    *v = traj[j][a].at(t);
                }
            }
            skeleton(&angles, &bones, [0.0, cfg.hip_height_mm * scale, 0.0])
        })
        .collect()
}

/// Generates `subjects × actions × frames × cameras` records, ordered by
/// subject, action, frame, then camera. Pure function of the config.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Vec<FrameRecord>, DataError> {
    cfg.validate()?;
    let root = RngStream::new(cfg.seed);
    let cameras = cfg.cameras();
    let sigma = NoiseSigma::Scalar(cfg.noise_sigma_px);
    let mut out = Vec::with_capacity(
        cfg.subjects.len() * cfg.n_actions * cfg.frames_per_action * cameras.len(),
    );
    for &subject in &cfg.subjects {
        for (a, action) in ACTION_NAMES.iter().take(cfg.n_actions).enumerate() {
            for (f, world) in clip(cfg, &root, subject, a).into_iter().enumerate() {
                for (k, cam) in cameras.iter().enumerate() {
                    let mut pose2d = project(cam, &world)?;
                    if cfg.noise_sigma_px > 0.0 {
                        let mut rng = root.substream_path(&[4, subject as u64, a as u64, f as u64, k as u64]);
                        pose2d = simulate_detector_noise(&pose2d, &sigma, &mut rng);
                    }
                    out.push(FrameRecord {
                        subject,
                        action: action.to_string(),
                        frame: f as u32,
                        camera: cam.clone(),
                        pose2d,
                        pose3d: Some(to_camera_hip_centered(cam, &world)),
                        hip_world: Some(world.hip()),
                        synthetic_cam: false,
                    });
                }
            }
        }
    }
    Ok(out)
}
