use super::EvalError;
use crate::geometry::{procrustes_align, Pose3D};

fn check_counts(preds: &[Pose3D], gts: &[Pose3D]) -> Result<(), EvalError> {
    if preds.len() != gts.len() {
        return Err(EvalError::CountMismatch {
            preds: preds.len(),
            gts: gts.len(),
        });
    }
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(())
}

/// Mean per-joint Euclidean error of each frame.
pub fn per_frame_errors(preds: &[Pose3D], gts: &[Pose3D]) -> Result<Vec<f64>, EvalError> {
    check_counts(preds, gts)?;
    Ok(preds.iter().zip(gts).map(|(p, g)| p.mean_joint_distance(g)).collect())
}

/// Mean over frames and joints of the per-joint Euclidean error (mm).
pub fn mpjpe(preds: &[Pose3D], gts: &[Pose3D]) -> Result<f64, EvalError> {
    let e = per_frame_errors(preds, gts)?;
    Ok(e.iter().sum::<f64>() / e.len() as f64)
}

/// Per-frame errors after aligning each prediction onto its ground truth.
pub fn per_frame_errors_procrustes(
    preds: &[Pose3D],
    gts: &[Pose3D],
    with_scale: bool,
) -> Result<Vec<f64>, EvalError> {
    check_counts(preds, gts)?;
    preds
        .iter()
        .zip(gts)
        .map(|(p, g)| Ok(procrustes_align(p, g, with_scale)?.mean_joint_distance(g)))
        .collect()
}

/// MPJPE after per-frame Procrustes alignment (rigid unless `with_scale`).
pub fn mpjpe_procrustes(preds: &[Pose3D], gts: &[Pose3D], with_scale: bool) -> Result<f64, EvalError> {
    let e = per_frame_errors_procrustes(preds, gts, with_scale)?;
    Ok(e.iter().sum::<f64>() / e.len() as f64)
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
