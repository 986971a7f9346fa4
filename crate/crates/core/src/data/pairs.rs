use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{DataError, FrameRecord, NormStats};
use crate::compute::{Matrix, RngStream};
use crate::geometry::NUM_JOINTS;
use crate::losses::{build_siamese_targets, SiameseTarget, DEFAULT_LAMBDA1};

/// Record indices grouped by captured instant (subject, action, frame).
#[derive(Debug, Clone)]
pub struct PairIndex {
    n_records: usize,
    /// Groups seen from at least two cameras.
    multi_view: Vec<Vec<usize>>,
}

impl PairIndex {
    pub fn new(records: &[FrameRecord]) -> Self {
        let mut groups: BTreeMap<(u32, &str, u32), Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            groups.entry(r.frame_key()).or_default().push(i);
        }
        Self {
            n_records: records.len(),
            multi_view: groups.into_values().filter(|g| g.len() >= 2).collect(),
        }
    }

    pub fn n_records(&self) -> usize {
        self.n_records
    }

    pub fn multi_view_groups(&self) -> &[Vec<usize>] {
        &self.multi_view
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairSampling {
    pub batch_size: usize,
    /// Share of each batch drawn as same-instant, different-camera pairs;
    /// the count is `⌊batch_size · fraction⌋`.
    pub same_pose_fraction: f64,
    pub lambda1: f64,
}

impl Default for PairSampling {
    fn default() -> Self {
        Self {
            batch_size: 256,
            same_pose_fraction: 0.5,
            lambda1: DEFAULT_LAMBDA1,
        }
    }
}

impl PairSampling {
    pub fn same_pose_count(&self) -> usize {
        (self.batch_size as f64 * self.same_pose_fraction).floor() as usize
    }
}

/// A normalized siamese training batch.
#[derive(Debug, Clone)]
pub struct PairBatch {
    pub inputs_a: Matrix,
    pub inputs_b: Matrix,
    pub targets_a: Matrix,
    pub targets_b: Matrix,
    pub siamese: Vec<SiameseTarget>,
    pub same_pose: Vec<bool>,
    /// Record indices of each pair.
    pub indices: Vec<(usize, usize)>,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Builds a batch from explicit record pairs.
    pub fn from_pairs(
        records: &[FrameRecord],
        pairs: &[(usize, usize)],
        same_pose: Vec<bool>,
        stats: &NormStats,
        lambda1: f64,
    ) -> Result<Self, DataError> {
        let b = pairs.len();
        let mut ia = Matrix::zeros(b, 2 * NUM_JOINTS);
        let mut ib = Matrix::zeros(b, 2 * NUM_JOINTS);
        let mut ta = Matrix::zeros(b, 3 * NUM_JOINTS);
        let mut tb = Matrix::zeros(b, 3 * NUM_JOINTS);
        for (row, &(i, j)) in pairs.iter().enumerate() {
            let (ra, rb) = (&records[i], &records[j]);
            ia.row_mut(row).copy_from_slice(&stats.normalize_2d(&ra.pose2d));
            ib.row_mut(row).copy_from_slice(&stats.normalize_2d(&rb.pose2d));
            ta.row_mut(row).copy_from_slice(&stats.normalize_3d(ra.ground_truth()?));
            tb.row_mut(row).copy_from_slice(&stats.normalize_3d(rb.ground_truth()?));
        }
        let refs: Vec<(&FrameRecord, &FrameRecord)> = pairs.iter().map(|&(i, j)| (&records[i], &records[j])).collect();
        Ok(Self {
            inputs_a: ia,
            inputs_b: ib,
            targets_a: ta,
            targets_b: tb,
            siamese: build_siamese_targets(&refs, lambda1)?,
            same_pose,
            indices: pairs.to_vec(),
        })
    }
}

/// Draws one batch: same-instant pairs from two distinct random cameras,
/// then independent uniformly random pairs.
pub fn sample_pairs(
    records: &[FrameRecord],
    index: &PairIndex,
    stats: &NormStats,
    sampling: &PairSampling,
    rng: &mut RngStream,
) -> Result<PairBatch, DataError> {
    if records.is_empty() || index.n_records() != records.len() {
        return Err(DataError::EmptySplit);
    }
    let n_same = sampling.same_pose_count();
    if n_same > 0 && index.multi_view.is_empty() {
        return Err(DataError::InsufficientViews);
    }
    let mut pairs = Vec::with_capacity(sampling.batch_size);
    let mut same = Vec::with_capacity(sampling.batch_size);
    for _ in 0..n_same {
        let g = &index.multi_view[rng.below(index.multi_view.len())];
        let a = rng.below(g.len());
        let mut b = rng.below(g.len() - 1);
        if b >= a {
            b += 1;
        }
        pairs.push((g[a], g[b]));
        same.push(true);
    }
    for _ in n_same..sampling.batch_size {
        pairs.push((rng.below(records.len()), rng.below(records.len())));
        same.push(false);
    }
    PairBatch::from_pairs(records, &pairs, same, stats, sampling.lambda1)
}
