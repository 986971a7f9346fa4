use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{train, TrainConfig, TrainData, TrainError, TrainHooks, TrainOutcome};
use crate::compute::{Activation, RngStream};
use crate::data::{augment_cameras, fit_norm_stats, split_protocol, AugmentationConfig, FrameRecord, NormStats, Protocol, SubjectSplit};
use crate::eval::{record_errors, Alignment};
use crate::geometry::Camera;
use crate::model::ModelConfig;

/// Everything that determines one experiment apart from the records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub augmentation: AugmentationConfig,
    pub subjects: SubjectSplit,
    pub test_camera: String,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            augmentation: AugmentationConfig::default(),
            subjects: SubjectSplit::default(),
            test_camera: "cam1".into(),
        }
    }
}

impl ExperimentSpec {
    /// Single-core scale: a narrower network and M = 64. λ₁ is halved so
    /// random-pair targets stay inside the reachable `2√M` distance, and
    /// λ₂ is lowered so the siamese term does not swamp the pose loss.
    pub fn desk_scale() -> Self {
        let mut s = Self::default();
        s.model.hidden = 128;
        s.model.embedding.m = 64;
        s.train.epochs = 30;
        s.train.lambda1 = 0.005;
        s.train.lambda2 = 0.1;
        s
    }
}

/// Hex sha256 of a value's JSON serialization.
pub fn spec_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("serializable");
    hex::encode(Sha256::digest(&json))
}

/// Split, augmentation and statistics shared by every run of an experiment.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub train: Vec<FrameRecord>,
    pub train_augmented: Vec<FrameRecord>,
    pub test: Vec<FrameRecord>,
    /// Fitted on the unaugmented training split.
    pub stats: NormStats,
    pub test_camera: Option<Camera>,
}

pub fn prepare_experiment(records: &[FrameRecord], spec: &ExperimentSpec) -> Result<ExperimentData, TrainError> {
    let protocol = spec.train.protocol;
    let (train, test) = split_protocol(records, protocol, &spec.subjects, &spec.test_camera)?;
    let stats = fit_norm_stats(&train)?;
    let test_camera = (protocol == Protocol::Three)
        .then(|| test.iter().find(|r| r.camera.id == spec.test_camera).map(|r| r.camera.clone()))
        .flatten();
    let held_out: Vec<Camera> = test_camera.iter().cloned().collect();
    let aug_rng = RngStream::new(spec.train.seed).substream(0x4155_4745);
    let train_augmented = augment_cameras(&train, &spec.augmentation, &held_out, &aug_rng)?;
    Ok(ExperimentData {
        train,
        train_augmented,
        test,
        stats,
        test_camera,
    })
}

/// Configurations compared in the component ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    AllOn,
    NoSiamese,
    NoAugmentation,
    NoLeakyRelu,
    /// Single-branch ReLU lifter without augmentation.
    Baseline,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 5] = [
        AblationVariant::AllOn,
        AblationVariant::NoSiamese,
        AblationVariant::NoAugmentation,
        AblationVariant::NoLeakyRelu,
        AblationVariant::Baseline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationVariant::AllOn => "all_on",
            AblationVariant::NoSiamese => "no_siamese",
            AblationVariant::NoAugmentation => "no_augmentation",
            AblationVariant::NoLeakyRelu => "no_leaky_relu",
            AblationVariant::Baseline => "baseline",
        }
    }

    pub fn siamese(self) -> bool {
        matches!(self, AblationVariant::AllOn | AblationVariant::NoAugmentation | AblationVariant::NoLeakyRelu)
    }

    pub fn augmentation(self) -> bool {
        matches!(self, AblationVariant::AllOn | AblationVariant::NoSiamese | AblationVariant::NoLeakyRelu)
    }

    pub fn leaky(self) -> bool {
        !matches!(self, AblationVariant::NoLeakyRelu | AblationVariant::Baseline)
    }

    /// The spec with this variant's components switched off.
    pub fn apply(self, spec: &ExperimentSpec) -> ExperimentSpec {
        let mut s = spec.clone();
        s.train.siamese_enabled = spec.train.siamese_enabled && self.siamese();
        s.augmentation.enabled = spec.augmentation.enabled && self.augmentation();
        if !self.leaky() {
            s.model.activation = Activation::Relu;
        }
        s
    }
}

/// Trains with a given seed and returns the run plus its test error under
/// the training protocol's metric.
pub fn train_and_score(
    model: &ModelConfig,
    cfg: &TrainConfig,
    train_records: &[FrameRecord],
    test: &[FrameRecord],
    stats: &NormStats,
    config_hash: &str,
) -> Result<(TrainOutcome, f64), TrainError> {
    let data = TrainData {
        train: train_records,
        test,
        stats,
    };
    let hooks = TrainHooks {
        config_hash: config_hash.to_string(),
        ..TrainHooks::default()
    };
    let out = train(model, &TrainConfig { eval_max_frames: None, ..cfg.clone() }, data, hooks)?;
    let errs = record_errors(out.model(), test, Alignment::for_protocol(cfg.protocol, false))?;
    let score = errs.iter().sum::<f64>() / errs.len().max(1) as f64;
    Ok((out, score))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub seed: u64,
    /// Final-epoch test MPJPE in mm.
    pub mpjpe: f64,
    pub config_hash: String,
}

/// Trains every variant for every seed on a shared split and scores the
/// final weights. Runs sequentially in a fixed order.
pub fn ablation_suite(
    data: &ExperimentData,
    spec: &ExperimentSpec,
    variants: &[AblationVariant],
    seeds: &[u64],
    mut on_row: impl FnMut(&AblationRow, &TrainOutcome),
) -> Result<Vec<AblationRow>, TrainError> {
    let mut rows = Vec::new();
    for &v in variants {
        for &seed in seeds {
            let mut vs = v.apply(spec);
            vs.train.seed = seed;
            let hash = spec_hash(&(v, &vs));
            let records = if vs.augmentation.enabled {
                &data.train_augmented
            } else {
                &data.train
            };
            let (out, mpjpe) = train_and_score(&vs.model, &vs.train, records, &data.test, &data.stats, &hash)?;
            let row = AblationRow {
                variant: v,
                seed,
                mpjpe,
                config_hash: hash,
            };
            on_row(&row, &out);
            rows.push(row);
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variants_switch_components() {
        let spec = ExperimentSpec::default();
        let b = AblationVariant::Baseline.apply(&spec);
        assert!(!b.train.siamese_enabled && !b.augmentation.enabled);
        assert_eq!(b.model.activation, Activation::Relu);
        let a = AblationVariant::AllOn.apply(&spec);
        assert_eq!(a, spec);
        let n = AblationVariant::NoLeakyRelu.apply(&spec);
        assert!(n.train.siamese_enabled && n.augmentation.enabled);
        assert_ne!(spec_hash(&a), spec_hash(&n));
    }
}
