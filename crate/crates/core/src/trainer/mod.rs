//! The training loop: pair sampling, siamese forward/backward, Adam with a
//! per-epoch exponential decay, per-epoch test evaluation, checkpoints and
//! the loss log.

mod ablation;
mod log;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{CheckpointError, TrainingState};
use crate::compute::{lr_schedule, Adam, AdamConfig, ComputeError, Parameterized, RngStream};
use crate::data::{sample_pairs, DataError, FrameRecord, NormStats, PairIndex, PairSampling, Protocol};
use crate::eval::{record_errors, Alignment, EvalError};
use crate::losses::{LossBreakdown, DEFAULT_LAMBDA1, DEFAULT_LAMBDA2};
use crate::model::{LiftingModel, ModelConfig};

pub use ablation::{
    ablation_suite, prepare_experiment, spec_hash, train_and_score, AblationRow, AblationVariant, ExperimentData,
    ExperimentSpec,
};
pub use log::{EpochRow, TrainLog};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error(transparent)]
    Compute(#[from] ComputeError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("invalid training configuration: {0}")]
    ConfigInvalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub decay: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub same_pose_fraction: f64,
    pub seed: u64,
    /// When off, the siamese term is dropped (λ₂ = 0).
    pub siamese_enabled: bool,
    /// Overrides the `⌈N / batch⌉` steps per epoch.
    pub steps_per_epoch: Option<usize>,
    /// Protocol whose metric is logged as the per-epoch test error.
    pub protocol: Protocol,
    /// Evaluate on at most this many evenly strided test records per epoch.
    pub eval_max_frames: Option<usize>,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 256,
            lr0: 0.001,
            decay: 0.96,
            lambda1: DEFAULT_LAMBDA1,
            lambda2: DEFAULT_LAMBDA2,
            same_pose_fraction: 0.5,
            seed: 0,
            siamese_enabled: true,
            steps_per_epoch: None,
            protocol: Protocol::Three,
            eval_max_frames: None,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::ConfigInvalid(m.to_string()));
        if self.epochs == 0 {
            return bad("train.epochs must be positive");
        }
        if self.batch_size < 2 {
            return bad("train.batch_size must be at least 2 (batch normalization)");
        }
        if !(self.lr0 > 0.0) || !(self.decay > 0.0) {
            return bad("train.lr0 and train.decay must be positive");
        }
        if !(self.lambda1 >= 0.0) || !(self.lambda2 >= 0.0) {
            return bad("train.lambda1 and train.lambda2 must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.same_pose_fraction) {
            return bad("train.same_pose_fraction must be in [0, 1]");
        }
        if self.steps_per_epoch == Some(0) {
            return bad("train.steps_per_epoch must be positive");
        }
        Ok(())
    }

    pub fn effective_lambda2(&self) -> f64 {
        if self.siamese_enabled {
            self.lambda2
        } else {
            0.0
        }
    }

    pub fn steps_for(&self, n_train: usize) -> usize {
        self.steps_per_epoch.unwrap_or_else(|| n_train.div_ceil(self.batch_size).max(1))
    }

    pub fn sampling(&self) -> PairSampling {
        PairSampling {
            batch_size: self.batch_size,
            same_pose_fraction: self.same_pose_fraction,
            lambda1: self.lambda1,
        }
    }

    /// Warns when typical targets `λ₁ · pose_dist` exceed the largest
    /// reachable embedding distance `2√M`.
    pub fn lambda1_warning(&self, m: usize, typical_pose_dist_mm: f64) -> Option<String> {
        let bound = 2.0 * (m as f64).sqrt();
        let target = self.lambda1 * typical_pose_dist_mm;
        (target > bound).then(|| {
            format!("lambda1 * typical pose distance = {target:.1} exceeds the reachable embedding distance {bound:.1}")
        })
    }
}

/// Records the loop trains and evaluates on.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub train: &'a [FrameRecord],
    pub test: &'a [FrameRecord],
    pub stats: &'a NormStats,
}

/// Optional side channels of a training run.
#[derive(Default)]
pub struct TrainHooks<'a> {
    /// Checked before every step; when set the run stops and returns the
    /// state reached so far.
    pub cancel: Option<&'a AtomicBool>,
    /// Called after every epoch.
    pub on_epoch: Option<&'a mut dyn FnMut(&EpochRow)>,
    /// Called after every optimizer step with `(epoch, steps done in the
    /// epoch, step losses)`.
    pub on_step: Option<&'a mut dyn FnMut(usize, usize, &LossBreakdown)>,
    /// When set, `best.eqlf` and `final.eqlf` are written here.
    pub checkpoint_dir: Option<PathBuf>,
    pub config_hash: String,
}

pub const BEST_CHECKPOINT: &str = "best.eqlf";
pub const FINAL_CHECKPOINT: &str = "final.eqlf";

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Final weights plus optimizer and loop state.
    pub state: TrainingState,
    /// Weights of the epoch with the lowest test error.
    pub best: Option<LiftingModel>,
    pub best_epoch: Option<usize>,
    pub log: TrainLog,
    pub cancelled: bool,
}

impl TrainOutcome {
    pub fn model(&self) -> &LiftingModel {
        &self.state.model
    }
}

const STEP_TAG: u64 = 0x5354_4550;

/// Per-step stream: sampling and dropout for (epoch, step) are a pure
/// function of the seed, so runs resume exactly.
pub fn step_rng(seed: u64, epoch: usize, step: usize) -> RngStream {
    RngStream::new(seed).substream_path(&[STEP_TAG, epoch as u64, step as u64])
}

/// Initial weights for a seed.
pub fn init_model(cfg: &ModelConfig, seed: u64) -> LiftingModel {
    LiftingModel::new(*cfg, &mut RngStream::new(seed).substream(0x494e_4954))
}

fn strided(records: &[FrameRecord], max: Option<usize>) -> Vec<&FrameRecord> {
    match max {
        Some(k) if k < records.len() && k > 0 => {
            let stride = records.len().div_ceil(k);
            records.iter().step_by(stride).collect()
        }
        _ => records.iter().collect(),
    }
}

/// Per-epoch test error under the training protocol's metric.
fn test_error(model: &LiftingModel, test: &[&FrameRecord], protocol: Protocol) -> Result<f64, TrainError> {
    if test.is_empty() {
        return Ok(f64::NAN);
    }
    let owned: Vec<FrameRecord> = test.iter().map(|r| (*r).clone()).collect();
    let e = record_errors(model, &owned, Alignment::for_protocol(protocol, false))?;
    Ok(e.iter().sum::<f64>() / e.len() as f64)
}

/// Trains a freshly initialized model.
pub fn train(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    data: TrainData<'_>,
    hooks: TrainHooks<'_>,
) -> Result<TrainOutcome, TrainError> {
    model_cfg.validate().map_err(TrainError::ConfigInvalid)?;
    let mut model = init_model(model_cfg, cfg.seed);
    model.stats = Some(data.stats.clone());
    let state = TrainingState {
        model,
        adam: Adam::new(cfg.adam),
        epoch: 0,
        step: 0,
        seed: cfg.seed,
        best_test_mpjpe: f64::INFINITY,
        config_hash: hooks.config_hash.clone(),
        rng: RngStream::new(cfg.seed),
    };
    run(state, cfg, data, hooks)
}

/// Continues from a saved state until `cfg.epochs` epochs are complete.
/// The checkpoint's seed drives the remaining steps.
pub fn resume(
    state: TrainingState,
    cfg: &TrainConfig,
    data: TrainData<'_>,
    hooks: TrainHooks<'_>,
) -> Result<TrainOutcome, TrainError> {
    let cfg = TrainConfig {
        seed: state.seed,
        ..cfg.clone()
    };
    if state.model.stats.as_ref() != Some(data.stats) {
        return Err(TrainError::Checkpoint(CheckpointError::SchemaMismatch(
            "normalization statistics differ from the training data".into(),
        )));
    }
    run(state, &cfg, data, hooks)
}

fn save_state(dir: &Path, name: &str, state: &TrainingState) -> Result<(), TrainError> {
    std::fs::create_dir_all(dir).map_err(CheckpointError::from)?;
    Ok(state.save(&dir.join(name))?)
}

fn run(
    mut state: TrainingState,
    cfg: &TrainConfig,
    data: TrainData<'_>,
    mut hooks: TrainHooks<'_>,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(DataError::EmptySplit.into());
    }
    let index = PairIndex::new(data.train);
    let sampling = cfg.sampling();
    let lambda2 = cfg.effective_lambda2();
    let steps = cfg.steps_for(data.train.len());
    let test = strided(data.test, cfg.eval_max_frames);
    let mut log = TrainLog::default();
    let mut best: Option<LiftingModel> = None;
    let mut best_epoch = None;
    let mut cancelled = false;

    'epochs: while state.epoch < cfg.epochs {
        let epoch = state.epoch;
        let lr = lr_schedule(cfg.lr0, cfg.decay, epoch);
        let started = Instant::now();
        let mut sum = LossBreakdown::default();
        let mut n = 0usize;
        while state.step < steps {
            if hooks.cancel.is_some_and(|c| c.load(Ordering::SeqCst)) {
                cancelled = true;
                break 'epochs;
            }
            let mut rng = step_rng(state.seed, epoch, state.step);
            let batch = sample_pairs(data.train, &index, data.stats, &sampling, &mut rng)?;
            state.model.zero_grad();
            let l = state.model.siamese_objective(&batch, lambda2, &mut rng, true)?;
            if !l.total.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    step: state.step,
                });
            }
            let mut params = state.model.params_mut();
            state.adam.step(&mut params, lr);
            sum.l2_a += l.l2_a;
            sum.l2_b += l.l2_b;
            sum.siamese += l.siamese;
            sum.total += l.total;
            n += 1;
            state.step += 1;
            state.rng = rng;
            if let Some(cb) = hooks.on_step.as_mut() {
                cb(epoch, state.step, &l);
            }
        }
        let test_mpjpe = test_error(&state.model, &test, cfg.protocol)?;
        let k = n.max(1) as f64;
        let row = EpochRow {
            epoch,
            lr,
            l2_a: sum.l2_a / k,
            l2_b: sum.l2_b / k,
            siamese: sum.siamese / k,
            total: sum.total / k,
            test_mpjpe,
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        state.epoch += 1;
        state.step = 0;
        if test_mpjpe < state.best_test_mpjpe {
            state.best_test_mpjpe = test_mpjpe;
            best = Some(state.model.clone());
            best_epoch = Some(epoch);
            if let Some(dir) = &hooks.checkpoint_dir {
                save_state(dir, BEST_CHECKPOINT, &state)?;
            }
        }
        if let Some(cb) = hooks.on_epoch.as_mut() {
            cb(&row);
        }
        log.rows.push(row);
    }
    if let Some(dir) = &hooks.checkpoint_dir {
        save_state(dir, FINAL_CHECKPOINT, &state)?;
    }
    Ok(TrainOutcome {
        state,
        best,
        best_epoch,
        log,
        cancelled,
    })
}
