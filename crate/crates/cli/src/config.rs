//! The run configuration: one JSON document, every key defaulted, unknown
//! keys rejected, `--set` overrides applied before validation.

use std::path::{Path, PathBuf};

use eqlift::data::{AugmentationConfig, Protocol, SubjectSplit, SynthConfig};
use eqlift::model::ModelConfig;
use eqlift::trainer::{spec_hash, AblationVariant, ExperimentSpec, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// JSONL dataset; the synthetic generator runs when unset.
    pub dataset: Option<PathBuf>,
    pub test_subjects: Vec<u32>,
    pub test_camera: String,
    /// Frame rate of the dataset file; records are subsampled to 10 fps.
    pub source_fps: Option<f64>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            dataset: None,
            test_subjects: SubjectSplit::default().test_subjects,
            test_camera: "cam1".into(),
            source_fps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub protocols: Vec<Protocol>,
    /// Scale is also fitted in Protocol 2 alignment.
    pub procrustes_scale: bool,
    /// Drop the held-out camera from the Protocol 1 and 2 test sides.
    pub exclude_test_camera: bool,
    pub rotation_angles_deg: Vec<f64>,
    pub sweep_distances_deg: Vec<f64>,
    pub sweep_seeds: Vec<u64>,
    pub ablation_variants: Vec<AblationVariant>,
    pub ablation_seeds: Vec<u64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            protocols: vec![Protocol::One, Protocol::Two, Protocol::Three],
            procrustes_scale: false,
            exclude_test_camera: false,
            rotation_angles_deg: (-12..=12).map(|k| 15.0 * k as f64).collect(),
            sweep_distances_deg: vec![0.0, 15.0, 30.0, 45.0, 60.0, 75.0, 90.0],
            sweep_seeds: vec![0, 1, 2],
            ablation_variants: AblationVariant::ALL.to_vec(),
            ablation_seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: "runs/default".into() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub synth: SynthConfig,
    pub augmentation: AugmentationConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub output: OutputSection,
}

/// Parses a `--set` value as JSON, falling back to a plain string.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Applies `a.b.c=value` to a JSON document, creating objects on the way.
pub fn apply_set(doc: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got {assignment:?}")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("bad --set key {key:?}")));
    }
    let mut node = doc;
    for p in &parts[..parts.len() - 1] {
        if !node.is_object() {
            return Err(CliError::Config(format!("--set {key}: {p} is not a section")));
        }
        node = node
            .as_object_mut()
            .expect("object")
            .entry(p.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| CliError::Config(format!("--set {key}: parent is not a section")))?;
    obj.insert(parts[parts.len() - 1].to_string(), parse_value(raw));
    Ok(())
}

impl RunConfig {
    /// Reads the file (or starts from defaults), applies overrides and
    /// validates.
    pub fn load(path: Option<&Path>, sets: &[String]) -> Result<Self, CliError> {
        let mut doc = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => Value::Object(Default::default()),
        };
        for s in sets {
            apply_set(&mut doc, s)?;
        }
        let cfg: RunConfig = serde_json::from_value(doc).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |e: String| CliError::Config(e);
        self.synth.validate().map_err(|e| cfg(e.to_string()))?;
        self.augmentation.validate().map_err(|e| cfg(e.to_string()))?;
        self.model.validate().map_err(cfg)?;
        self.train.validate().map_err(|e| cfg(e.to_string()))?;
        if let Some(fps) = self.data.source_fps {
            if !(fps.is_finite() && fps >= 10.0) {
                return Err(cfg("data.source_fps must be at least 10".into()));
            }
        }
        if self.data.test_subjects.is_empty() {
            return Err(cfg("data.test_subjects must not be empty".into()));
        }
        Ok(())
    }

    /// Hash of everything that affects results. The output directory is
    /// left out so the same run written elsewhere keeps its hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = OutputSection::default();
        spec_hash(&c)
    }

    pub fn subjects(&self) -> SubjectSplit {
        SubjectSplit {
            test_subjects: self.data.test_subjects.clone(),
        }
    }

    pub fn experiment(&self) -> ExperimentSpec {
        ExperimentSpec {
            model: self.model,
            train: self.train.clone(),
            augmentation: self.augmentation.clone(),
            subjects: self.subjects(),
            test_camera: self.data.test_camera.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_hash_is_stable() {
        let c = RunConfig::default();
        let json = serde_json::to_string(&c).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_eq!(c.hash().len(), 64);
    }

    #[test]
    fn set_overrides_nested_keys() {
        let c = RunConfig::load(None, &["train.epochs=3".into(), "data.test_camera=cam4".into()]).unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.data.test_camera, "cam4");
        assert_ne!(c.hash(), RunConfig::default().hash());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(
            RunConfig::load(None, &["train.epohcs=3".into()]),
            Err(CliError::Config(_))
        ));
        assert!(matches!(RunConfig::load(None, &["nonsense".into()]), Err(CliError::Config(_))));
    }

    #[test]
    fn output_dir_does_not_change_hash() {
        let a = RunConfig::load(None, &["output.dir=\"x\"".into()]).unwrap();
        assert_eq!(a.hash(), RunConfig::default().hash());
    }

    #[test]
    fn invalid_values_are_config_errors() {
        assert!(matches!(
            RunConfig::load(None, &["synth.camera_radius_mm=500".into()]),
            Err(CliError::Config(_))
        ));
        assert!(matches!(
            RunConfig::load(None, &["train.batch_size=1".into()]),
            Err(CliError::Config(_))
        ));
    }
}
