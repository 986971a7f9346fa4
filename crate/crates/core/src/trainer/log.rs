use std::fmt::Write;

use serde::{Deserialize, Serialize};

/// Losses are means over the epoch's steps; `test_mpjpe` is in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub lr: f64,
    pub l2_a: f64,
    pub l2_b: f64,
    pub siamese: f64,
    pub total: f64,
    pub test_mpjpe: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub rows: Vec<EpochRow>,
}

pub const CSV_HEADER: &str = "epoch,lr,l2_a,l2_b,siamese,total,test_mpjpe";

impl TrainLog {
    /// CSV with a provenance comment line. Wall time is left out so equal
    /// configurations give byte-identical files.
    pub fn to_csv(&self, config_hash: &str, seed: u64) -> String {
        let mut s = format!("# config_hash={config_hash} seed={seed}\n{CSV_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{:e},{:e},{:e},{:e},{:e},{:e}",
                r.epoch, r.lr, r.l2_a, r.l2_b, r.siamese, r.total, r.test_mpjpe
            );
        }
        s
    }

    pub fn is_finite(&self) -> bool {
        self.rows.iter().all(|r| {
            [r.lr, r.l2_a, r.l2_b, r.siamese, r.total].iter().all(|v| v.is_finite())
        })
    }

    /// Mean total loss over each window of `w` consecutive epochs.
    pub fn smoothed_total(&self, w: usize) -> Vec<f64> {
        self.rows
            .windows(w.max(1))
            .map(|win| win.iter().map(|r| r.total).sum::<f64>() / win.len() as f64)
            .collect()
    }
}
