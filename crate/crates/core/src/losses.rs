//! Pose regression losses and the siamese equivariance loss.
//!
//! Embeddings are `batch × 3M` matrices whose rows hold a `3 × M` block in
//! row-major order: column `j` of sample `b` is
//! `(row[j], row[M + j], row[2M + j])`.

use serde::{Deserialize, Serialize};

use crate::compute::{ComputeError, Matrix};
use crate::data::{DataError, FrameRecord};
use crate::geometry::{relative_rotation, Rotation3};

pub const DEFAULT_LAMBDA1: f64 = 0.01;
pub const DEFAULT_LAMBDA2: f64 = 1.0;

/// Per-pair target for the siamese loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiameseTarget {
    /// `R₂·R₁⁻¹`, camera 1 frame into camera 2 frame.
    pub rel_rot: Rotation3,
    /// Frobenius distance (mm) between the two hip-centered poses in a
    /// common frame.
    pub pose_dist: f64,
    pub lambda1: f64,
}

impl SiameseTarget {
    pub fn target_distance(&self) -> f64 {
        self.lambda1 * self.pose_dist
    }
}

/// Loss components of one siamese step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l2_a: f64,
    pub l2_b: f64,
    pub siamese: f64,
    pub total: f64,
}

fn check_same(op: &'static str, a: &Matrix, b: &Matrix) -> Result<(), ComputeError> {
    if a.shape() != b.shape() {
        return Err(ComputeError::ShapeMismatch {
            op,
            expected: a.shape(),
            got: b.shape(),
        });
    }
    Ok(())
}

/// Mean over the batch of the squared Euclidean error.
pub fn l2_pose_loss(pred: &Matrix, target: &Matrix) -> Result<f64, ComputeError> {
    l2_pose_loss_grad(pred, target).map(|(l, _)| l)
}

/// Loss and its gradient with respect to `pred`.
pub fn l2_pose_loss_grad(pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix), ComputeError> {
    check_same("l2_pose_loss", pred, target)?;
    let n = pred.rows().max(1) as f64;
    let mut grad = Matrix::zeros(pred.rows(), pred.cols());
    let mut loss = 0.0;
    for ((g, p), t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d = p - t;
        loss += d * d;
        *g = 2.0 * d / n;
    }
    Ok((loss / n, grad))
}

/// `R·h` applied to every column of a `3 × M` block.
pub fn rotate_block(r: &Rotation3, h: &[f64], m: usize) -> Vec<f64> {
    let mut out = vec![0.0; 3 * m];
    for j in 0..m {
        let v = r.apply([h[j], h[m + j], h[2 * m + j]]);
        out[j] = v[0];
        out[m + j] = v[1];
        out[2 * m + j] = v[2];
    }
    out
}

/// `‖R·h₁ − h₂‖_F` per pair.
pub fn embedding_distances(h1: &Matrix, h2: &Matrix, rots: &[Rotation3]) -> Result<Vec<f64>, ComputeError> {
    check_same("embedding_distances", h1, h2)?;
    if rots.len() != h1.rows() || !h1.cols().is_multiple_of(3) {
        return Err(ComputeError::ShapeMismatch {
            op: "embedding_distances",
            expected: (h1.rows(), h1.cols()),
            got: (rots.len(), h1.cols()),
        });
    }
    let m = h1.cols() / 3;
    Ok((0..h1.rows())
        .map(|b| {
            let rh = rotate_block(&rots[b], h1.row(b), m);
            rh.iter()
                .zip(h2.row(b))
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
        })
        .collect())
}

/// Mean over pairs of `(‖rel_rot·h₁ − h₂‖_F − λ₁·pose_dist)²`.
pub fn siamese_loss(h1: &Matrix, h2: &Matrix, targets: &[SiameseTarget]) -> Result<f64, ComputeError> {
    siamese_loss_grad(h1, h2, targets).map(|(l, _, _)| l)
}

/// Siamese loss with gradients for both embeddings. Where the embedding
/// distance is exactly zero the (undefined) norm gradient is taken as zero.
pub fn siamese_loss_grad(
    h1: &Matrix,
    h2: &Matrix,
    targets: &[SiameseTarget],
) -> Result<(f64, Matrix, Matrix), ComputeError> {
    check_same("siamese_loss", h1, h2)?;
    if targets.len() != h1.rows() || !h1.cols().is_multiple_of(3) {
        return Err(ComputeError::ShapeMismatch {
            op: "siamese_loss",
            expected: (h1.rows(), h1.cols()),
            got: (targets.len(), h1.cols()),
        });
    }
    let m = h1.cols() / 3;
    let n = h1.rows().max(1) as f64;
    let mut dh1 = Matrix::zeros(h1.rows(), h1.cols());
    let mut dh2 = Matrix::zeros(h2.rows(), h2.cols());
    let mut loss = 0.0;
    for (b, t) in targets.iter().enumerate() {
        let rh = rotate_block(&t.rel_rot, h1.row(b), m);
        let diff: Vec<f64> = rh.iter().zip(h2.row(b)).map(|(x, y)| x - y).collect();
        let dist = diff.iter().map(|d| d * d).sum::<f64>().sqrt();
        let resid = dist - t.target_distance();
        loss += resid * resid;
        if dist > 0.0 {
            let coef = 2.0 * resid / (n * dist);
            let g: Vec<f64> = diff.iter().map(|d| coef * d).collect();
            // d/dh₂ = −g, d/dh₁ = Rᵀ·g
            for (o, v) in dh2.row_mut(b).iter_mut().zip(&g) {
                *o = -v;
            }
            dh1.row_mut(b).copy_from_slice(&rotate_block(&t.rel_rot.transpose(), &g, m));
        }
    }
    Ok((loss / n, dh1, dh2))
}

/// `ℓ = ℓ₂⁽¹⁾ + ℓ₂⁽²⁾ + λ₂·ℓ_S`.
pub fn total_loss(l2_a: f64, l2_b: f64, l_s: f64, lambda2: f64) -> f64 {
    l2_a + l2_b + lambda2 * l_s
}

/// Siamese targets for record pairs. Pose 1 is rotated into the camera-2
/// frame before measuring the distance.
pub fn build_siamese_targets(
    pairs: &[(&FrameRecord, &FrameRecord)],
    lambda1: f64,
) -> Result<Vec<SiameseTarget>, DataError> {
    pairs
        .iter()
        .map(|(a, b)| {
            let rel_rot = relative_rotation(&a.camera, &b.camera);
            let pa = a.ground_truth()?;
            let pb = b.ground_truth()?;
            let pose_dist = pa.rotated(&rel_rot).frobenius_distance(pb);
            Ok(SiameseTarget {
                rel_rot,
                pose_dist,
                lambda1,
            })
        })
        .collect()
}

/// Embedding distances can't exceed `2√M` for unit columns; targets above
/// that bound are unreachable.
pub fn count_unreachable_targets(targets: &[SiameseTarget], m: usize) -> usize {
    let bound = 2.0 * (m as f64).sqrt();
    targets.iter().filter(|t| t.target_distance() > bound).count()
}
