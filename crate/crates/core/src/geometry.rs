//! Rotations, pinhole cameras, projection, hip-centering and Procrustes
//! alignment.
//!
//! World convention: right-handed, `y` is the vertical axis (up). Cameras use
//! the usual computer-vision frame: `x` right, `y` down, `z` forward along the
//! optical axis. Every function here is pure.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of skeleton joints. Joint 0 is the hip.
pub const NUM_JOINTS: usize = 16;

/// Joints closer than this (mm, camera frame) are rejected by [`project`].
pub const EPS_DEPTH: f64 = 1.0;

pub type Vec3 = [f64; 3];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("joint {joint} has non-positive depth {depth:.3} mm in camera {camera}")]
    NonPositiveDepth {
        camera: String,
        joint: usize,
        depth: f64,
    },
    #[error("procrustes target is degenerate (all joints coincide)")]
    DegenerateTarget,
    #[error("matrix is not a proper rotation (orthonormality error {ortho:.3e}, det {det:.6})")]
    NotARotation { ortho: f64, det: f64 },
}

/// A proper 3x3 rotation, stored row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rotation3 {
    m: [[f64; 3]; 3],
}

impl Default for Rotation3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation3 {
    pub const fn identity() -> Self {
        Self {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    /// Validates orthonormality and determinant to within 1e-9.
    pub fn from_rows(m: [[f64; 3]; 3]) -> Result<Self, GeometryError> {
        let r = Self { m };
        let ortho = r.orthonormality_error();
        let det = r.det();
        if ortho > 1e-9 || (det - 1.0).abs() > 1e-9 || !ortho.is_finite() {
            return Err(GeometryError::NotARotation { ortho, det });
        }
        Ok(r)
    }

    /// Builds from a row-major slice of nine values.
    pub fn from_row_slice(v: &[f64]) -> Result<Self, GeometryError> {
        if v.len() != 9 {
            return Err(GeometryError::NotARotation {
                ortho: f64::NAN,
                det: f64::NAN,
            });
        }
        Self::from_rows([[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]])
    }

    pub(crate) fn from_rows_unchecked(m: [[f64; 3]; 3]) -> Self {
        Self { m }
    }

    /// Right-handed rotation about an arbitrary unit axis (Rodrigues).
    pub fn from_axis_angle(axis: Vec3, angle_rad: f64) -> Self {
        let n = norm3(axis);
        let [x, y, z] = [axis[0] / n, axis[1] / n, axis[2] / n];
        let (s, c) = angle_rad.sin_cos();
        let t = 1.0 - c;
        Self {
            m: [
                [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
                [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
                [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
            ],
        }
    }

    pub fn rows(&self) -> &[[f64; 3]; 3] {
        &self.m
    }

    pub fn to_row_vec(&self) -> Vec<f64> {
        self.m.iter().flatten().copied().collect()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.m[r][c]
    }

    /// Inverse of a rotation is its transpose.
    pub fn transpose(&self) -> Self {
        let m = &self.m;
        Self {
            m: [
                [m[0][0], m[1][0], m[2][0]],
                [m[0][1], m[1][1], m[2][1]],
                [m[0][2], m[1][2], m[2][2]],
            ],
        }
    }

    pub fn inverse(&self) -> Self {
        self.transpose()
    }

    /// Matrix product `self · other`.
    pub fn compose(&self, other: &Rotation3) -> Self {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.m[i][k] * other.m[k][j]).sum();
            }
        }
        Self { m: out }
    }

    pub fn apply(&self, v: Vec3) -> Vec3 {
        let m = &self.m;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    pub fn det(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Frobenius norm of `mᵀm − I`.
    pub fn orthonormality_error(&self) -> f64 {
        let p = self.transpose().compose(self);
        let mut acc = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let d = p.m[i][j] - if i == j { 1.0 } else { 0.0 };
                acc += d * d;
            }
        }
        acc.sqrt()
    }

    /// Frobenius distance between two matrices.
    pub fn distance(&self, other: &Rotation3) -> f64 {
        let mut acc = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let d = self.m[i][j] - other.m[i][j];
                acc += d * d;
            }
        }
        acc.sqrt()
    }
}

/// Right-handed rotation about the world vertical (`y`) axis.
pub fn rot_vertical(angle_deg: f64) -> Rotation3 {
    let (s, c) = angle_deg.to_radians().sin_cos();
    Rotation3 {
        m: [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]],
    }
}

/// Pinhole camera. `rot` maps world directions into the camera frame and
/// `center` is the optical center in world millimetres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub id: String,
    pub rot: Rotation3,
    pub center: Vec3,
    pub focal: [f64; 2],
    pub principal: [f64; 2],
}

impl Camera {
    /// A camera at `center` whose optical axis points at `target`, with the
    /// image `y` axis pointing as close to world-down as possible.
    pub fn look_at(
        id: impl Into<String>,
        center: Vec3,
        target: Vec3,
        focal: [f64; 2],
        principal: [f64; 2],
    ) -> Self {
        let fwd = normalize3(sub3(target, center));
        let right = normalize3(cross3(fwd, [0.0, 1.0, 0.0]));
        let down = cross3(fwd, right);
        Self {
            id: id.into(),
            rot: Rotation3::from_rows_unchecked([right, down, fwd]),
            center,
            focal,
            principal,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.focal.iter().all(|f| f.is_finite() && *f > 0.0)
            && self.center.iter().all(|c| c.is_finite())
            && self.rot.orthonormality_error() <= 1e-9
            && (self.rot.det() - 1.0).abs() <= 1e-9
    }

    /// World point into the camera frame.
    pub fn to_camera_frame(&self, p: Vec3) -> Vec3 {
        self.rot.apply(sub3(p, self.center))
    }

    /// The same camera swung by `angle_deg` about the vertical axis through
    /// `pivot`. Intrinsics and tilt are preserved.
    pub fn rotated_about_vertical(&self, angle_deg: f64, pivot: Vec3, id: impl Into<String>) -> Self {
        let q = rot_vertical(angle_deg);
        let offset = q.apply(sub3(self.center, pivot));
        Self {
            id: id.into(),
            rot: self.rot.compose(&q.transpose()),
            center: add3(pivot, offset),
            focal: self.focal,
            principal: self.principal,
        }
    }

    /// Azimuth of the camera center around `pivot`, degrees in (-180, 180].
    /// Zero is the +z direction; increases with right-handed rotation about +y.
    pub fn azimuth_deg(&self, pivot: Vec3) -> f64 {
        let d = sub3(self.center, pivot);
        d[0].atan2(d[2]).to_degrees()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseFrame {
    World,
    Camera,
    HipCentered,
}

/// A 3D skeleton in millimetres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose3D {
    pub joints: [Vec3; NUM_JOINTS],
    pub frame: PoseFrame,
}

impl Pose3D {
    pub fn new(joints: [Vec3; NUM_JOINTS], frame: PoseFrame) -> Self {
        Self { joints, frame }
    }

    pub fn zeros(frame: PoseFrame) -> Self {
        Self {
            joints: [[0.0; 3]; NUM_JOINTS],
            frame,
        }
    }

    /// Reads 48 values laid out joint-major (`x0 y0 z0 x1 ...`).
    pub fn from_flat(v: &[f64], frame: PoseFrame) -> Option<Self> {
        if v.len() != 3 * NUM_JOINTS {
            return None;
        }
        let mut joints = [[0.0; 3]; NUM_JOINTS];
        for (j, joint) in joints.iter_mut().enumerate() {
            joint.copy_from_slice(&v[3 * j..3 * j + 3]);
        }
        Some(Self { joints, frame })
    }

    pub fn to_flat(&self) -> [f64; 3 * NUM_JOINTS] {
        let mut out = [0.0; 3 * NUM_JOINTS];
        for (j, p) in self.joints.iter().enumerate() {
            out[3 * j..3 * j + 3].copy_from_slice(p);
        }
        out
    }

    pub fn rotated(&self, r: &Rotation3) -> Self {
        Self {
            joints: self.joints.map(|p| r.apply(p)),
            frame: self.frame,
        }
    }

    pub fn translated(&self, t: Vec3) -> Self {
        Self {
            joints: self.joints.map(|p| add3(p, t)),
            frame: self.frame,
        }
    }

    pub fn hip(&self) -> Vec3 {
        self.joints[0]
    }

    /// Frobenius distance over all joints.
    pub fn frobenius_distance(&self, other: &Pose3D) -> f64 {
        self.joints
            .iter()
            .zip(&other.joints)
            .map(|(a, b)| {
                let d = sub3(*a, *b);
                dot3(d, d)
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Mean per-joint Euclidean distance.
    pub fn mean_joint_distance(&self, other: &Pose3D) -> f64 {
        self.joints
            .iter()
            .zip(&other.joints)
            .map(|(a, b)| norm3(sub3(*a, *b)))
            .sum::<f64>()
            / NUM_JOINTS as f64
    }

    pub fn is_finite(&self) -> bool {
        self.joints.iter().flatten().all(|v| v.is_finite())
    }
}

/// A 2D skeleton in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose2D {
    pub joints: [[f64; 2]; NUM_JOINTS],
}

impl Pose2D {
    pub fn from_flat(v: &[f64]) -> Option<Self> {
        if v.len() != 2 * NUM_JOINTS {
            return None;
        }
        let mut joints = [[0.0; 2]; NUM_JOINTS];
        for (j, joint) in joints.iter_mut().enumerate() {
            joint.copy_from_slice(&v[2 * j..2 * j + 2]);
        }
        Some(Self { joints })
    }

    pub fn to_flat(&self) -> [f64; 2 * NUM_JOINTS] {
        let mut out = [0.0; 2 * NUM_JOINTS];
        for (j, p) in self.joints.iter().enumerate() {
            out[2 * j..2 * j + 2].copy_from_slice(p);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.joints.iter().flatten().all(|v| v.is_finite())
    }
}

/// `R₂·R₁ᵀ`: takes camera-1 frame directions into camera-2 frame directions.
pub fn relative_rotation(c1: &Camera, c2: &Camera) -> Rotation3 {
    c2.rot.compose(&c1.rot.transpose())
}

/// Pinhole projection of a world-frame pose.
pub fn project(cam: &Camera, pose: &Pose3D) -> Result<Pose2D, GeometryError> {
    let mut joints = [[0.0; 2]; NUM_JOINTS];
    for (j, p) in pose.joints.iter().enumerate() {
        let [x, y, z] = cam.to_camera_frame(*p);
        if !(z > EPS_DEPTH) {
            return Err(GeometryError::NonPositiveDepth {
                camera: cam.id.clone(),
                joint: j,
                depth: z,
            });
        }
        joints[j] = [
            cam.focal[0] * x / z + cam.principal[0],
            cam.focal[1] * y / z + cam.principal[1],
        ];
    }
    Ok(Pose2D { joints })
}

/// World pose into the camera frame with the hip moved to the origin.
pub fn to_camera_hip_centered(cam: &Camera, pose: &Pose3D) -> Pose3D {
    let cam_pose = pose.joints.map(|p| cam.to_camera_frame(p));
    let hip = cam_pose[0];
    Pose3D {
        joints: cam_pose.map(|p| sub3(p, hip)),
        frame: PoseFrame::HipCentered,
    }
}

/// Best rigid (optionally similarity) alignment of `pred` onto `gt` in the
/// least-squares sense, with reflections excluded.
pub fn procrustes_align(pred: &Pose3D, gt: &Pose3D, with_scale: bool) -> Result<Pose3D, GeometryError> {
    let mu_p = centroid(&pred.joints);
    let mu_g = centroid(&gt.joints);
    let pc = pred.joints.map(|p| sub3(p, mu_p));
    let gc = gt.joints.map(|p| sub3(p, mu_g));

    let g_var: f64 = gc.iter().map(|p| dot3(*p, *p)).sum();
    if !(g_var > 1e-18) {
        return Err(GeometryError::DegenerateTarget);
    }

    // Cross-covariance H = Σ p gᵀ; the optimum is R = V·D·Uᵀ for H = U·S·Vᵀ.
    let mut h = Matrix3::<f64>::zeros();
    for (p, g) in pc.iter().zip(&gc) {
        for r in 0..3 {
            for c in 0..3 {
                h[(r, c)] += p[r] * g[c];
            }
        }
    }
    let svd = h.svd(true, true);
    let u = svd.u.expect("svd u requested");
    let v_t = svd.v_t.expect("svd v_t requested");
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let corr = Matrix3::from_diagonal(&nalgebra::Vector3::new(1.0, 1.0, d));
    let r = v * corr * u.transpose();

    let scale = if with_scale {
        let p_var: f64 = pc.iter().map(|p| dot3(*p, *p)).sum();
        if p_var > 0.0 {
            let s = &svd.singular_values;
            (s[0] + s[1] + d * s[2]) / p_var
        } else {
            0.0
        }
    } else {
        1.0
    };

    let rot = Rotation3::from_rows_unchecked([
        [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
        [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
        [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
    ]);
    let joints = pc.map(|p| {
        let q = rot.apply(p);
        [scale * q[0] + mu_g[0], scale * q[1] + mu_g[1], scale * q[2] + mu_g[2]]
    });
    Ok(Pose3D {
        joints,
        frame: gt.frame,
    })
}

fn centroid(pts: &[Vec3; NUM_JOINTS]) -> Vec3 {
    let mut c = [0.0; 3];
    for p in pts {
        c = add3(c, *p);
    }
    c.map(|v| v / NUM_JOINTS as f64)
}

pub fn add3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn dot3(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross3(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm3(a: Vec3) -> f64 {
    dot3(a, a).sqrt()
}

pub fn normalize3(a: Vec3) -> Vec3 {
    let n = norm3(a);
    a.map(|v| v / n)
}

/// Smallest absolute difference between two angles, degrees in [0, 180].
pub fn angular_distance_deg(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}
