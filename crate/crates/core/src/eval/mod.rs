//! Metrics, the protocol harness, equivariance diagnostics and the
//! embedding-rotation and augmentation-distance experiments.

mod experiments;
mod metrics;
mod plot;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{split_protocol, DataError, FrameRecord, Protocol, SubjectSplit};
use crate::geometry::{GeometryError, Pose2D, Pose3D};
use crate::model::{LiftingModel, ModelError};

pub use experiments::{
    aug_distance_sweep, embedding_rotation_experiment, equivariance_error, plain_mpjpe, sweep_training_set, EquivarianceStats,
    RotationRow, SweepRow, SweepVariant,
};
pub use metrics::{median, mpjpe, mpjpe_procrustes, per_frame_errors, per_frame_errors_procrustes};
pub use plot::{line_plot_svg, Series};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{preds} predictions but {gts} ground-truth poses")]
    CountMismatch { preds: usize, gts: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{0}")]
    Other(String),
}

/// Alignment applied before measuring the error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    None,
    Rigid,
    Similarity,
}

impl Alignment {
    /// Protocol 2 aligns (rigidly unless `with_scale`); 1 and 3 don't.
    pub fn for_protocol(p: Protocol, with_scale: bool) -> Self {
        match (p, with_scale) {
            (Protocol::Two, false) => Alignment::Rigid,
            (Protocol::Two, true) => Alignment::Similarity,
            _ => Alignment::None,
        }
    }
}

/// Per-action error table for one protocol run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub alignment: Alignment,
    pub per_action: BTreeMap<String, f64>,
    pub frames_per_action: BTreeMap<String, usize>,
    /// Frame-weighted mean of `per_action`.
    pub average: f64,
    pub n_frames: usize,
    pub model_fingerprint: String,
    pub seed: u64,
    pub config_hash: String,
}

impl EvalReport {
    /// Re-derives the frame-weighted average from the per-action entries.
    pub fn recomputed_average(&self) -> f64 {
        let total: f64 = self
            .per_action
            .iter()
            .map(|(a, e)| e * self.frames_per_action[a] as f64)
            .sum();
        total / self.n_frames as f64
    }

    /// Actions as columns with the average last.
    pub fn to_table(&self) -> String {
        let mut header = vec!["Protocol".to_string()];
        let mut row = vec![format!("#{}", self.protocol)];
        for (a, e) in &self.per_action {
            header.push(a.clone());
            row.push(format!("{e:.1}"));
        }
        header.push("Avg".into());
        row.push(format!("{:.1}", self.average));
        let widths: Vec<usize> = header.iter().zip(&row).map(|(h, r)| h.len().max(r.len())).collect();
        let fmt = |cells: &[String]| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:>w$}"))
                .collect::<Vec<_>>()
                .join("  ")
        };
        format!("{}\n{}\n", fmt(&header), fmt(&row))
    }
}

const PREDICT_CHUNK: usize = 512;

/// Predictions for every record, chunked across threads with the model
/// frozen. Results are in record order regardless of thread count.
pub fn predict_records(model: &LiftingModel, records: &[FrameRecord]) -> Result<Vec<Pose3D>, EvalError> {
    let chunks: Vec<Result<Vec<Pose3D>, ModelError>> = records
        .par_chunks(PREDICT_CHUNK)
        .map(|chunk| {
            let inputs: Vec<Pose2D> = chunk.iter().map(|r| r.pose2d).collect();
            model.predict(&inputs)
        })
        .collect();
    let mut out = Vec::with_capacity(records.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

/// Per-record error under the given alignment.
pub fn record_errors(model: &LiftingModel, records: &[FrameRecord], alignment: Alignment) -> Result<Vec<f64>, EvalError> {
    let preds = predict_records(model, records)?;
    let gts: Vec<Pose3D> = records
        .iter()
        .map(|r| r.ground_truth().copied())
        .collect::<Result<_, _>>()?;
    match alignment {
        Alignment::None => per_frame_errors(&preds, &gts),
        Alignment::Rigid => per_frame_errors_procrustes(&preds, &gts, false),
        Alignment::Similarity => per_frame_errors_procrustes(&preds, &gts, true),
    }
}

/// Evaluates already-split test records.
pub fn evaluate_records(
    model: &LiftingModel,
    test: &[FrameRecord],
    protocol: Protocol,
    with_scale: bool,
) -> Result<EvalReport, EvalError> {
    if test.is_empty() {
        return Err(EvalError::Empty);
    }
    let alignment = Alignment::for_protocol(protocol, with_scale);
    let errors = record_errors(model, test, alignment)?;
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (r, e) in test.iter().zip(&errors) {
        let s = sums.entry(r.action.clone()).or_insert((0.0, 0));
        s.0 += e;
        s.1 += 1;
    }
    let per_action = sums.iter().map(|(a, (s, n))| (a.clone(), s / *n as f64)).collect();
    let frames_per_action = sums.iter().map(|(a, (_, n))| (a.clone(), *n)).collect();
    Ok(EvalReport {
        protocol,
        alignment,
        per_action,
        frames_per_action,
        average: errors.iter().sum::<f64>() / errors.len() as f64,
        n_frames: errors.len(),
        model_fingerprint: model.fingerprint(),
        seed: 0,
        config_hash: String::new(),
    })
}

/// Splits `dataset` per the protocol, checks that the model's statistics
/// were fitted on exactly the (unaugmented) training side, and evaluates
/// the test side.
pub fn run_protocol(
    model: &LiftingModel,
    dataset: &[FrameRecord],
    protocol: Protocol,
    subjects: &SubjectSplit,
    test_camera: &str,
    with_scale: bool,
) -> Result<EvalReport, EvalError> {
    let (train, test) = split_protocol(dataset, protocol, subjects, test_camera)?;
    model.stats.as_ref().ok_or(ModelError::StatsMissing)?.check_fitted_on(&train)?;
    evaluate_records(model, &test, protocol, with_scale)
}
