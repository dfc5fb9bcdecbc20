//! Experiment configuration: a versioned, sectioned TOML document.
//!
//! ```toml
//! schema_version = 1
//! name = "digits-analog"
//! track = "classification"      # or "detection"
//!
//! [data]          # classification benchmark
//! [detection]     # detection benchmark (scene spec under [detection.scene])
//! [learner]
//! [train]
//! [fusion]
//! [acquisition]
//! [selection]
//! [run]
//! ```
//!
//! Every section and key is optional and falls back to its default; unknown
//! keys are errors.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::AcquisitionConfig;
use crate::fusion::FusionConfig;
use crate::pipeline::{ALRunConfig, TrainSettings};
use crate::sampling::{SelectionConfig, Strategy};
use crate::synthdata::{ClassificationBenchmarkSpec, DetectionBenchmarkSpec};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackKind {
    Classification,
    Detection,
}

impl std::str::FromStr for TrackKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "classification" => Ok(Self::Classification),
            "detection" => Ok(Self::Detection),
            _ => Err(format!("unknown track `{s}`, expected classification or detection")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerSettings {
    pub hidden_dim: usize,
    pub dropout_rate: f64,
    /// MC dropout passes for scoring and evaluation.
    pub mc_samples: usize,
}

impl Default for LearnerSettings {
    fn default() -> Self {
        Self { hidden_dim: crate::learner::DEFAULT_HIDDEN_DIM, dropout_rate: crate::learner::DEFAULT_DROPOUT_RATE, mc_samples: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    pub iterations: usize,
    pub seeds: Vec<u64>,
    /// Strategies compared by a sweep.
    pub strategies: Vec<Strategy>,
    pub gap_level: f64,
    /// IoU threshold of the detection mAP.
    pub map_iou_threshold: f64,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            iterations: 20,
            seeds: vec![0, 1, 2],
            strategies: vec![Strategy::Random, Strategy::SubsampleTopn],
            gap_level: 0.95,
            map_iou_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub track: TrackKind,
    #[serde(default)]
    pub data: ClassificationBenchmarkSpec,
    #[serde(default)]
    pub detection: DetectionBenchmarkSpec,
    #[serde(default)]
    pub learner: LearnerSettings,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default)]
    pub fusion: FusionConfig,
    #[serde(default)]
    pub acquisition: AcquisitionConfig,
    #[serde(default)]
    pub selection: SelectionConfig,
    #[serde(default)]
    pub run: RunSettings,
}

impl ExperimentConfig {
    pub fn new(track: TrackKind) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            name: String::new(),
            track,
            data: Default::default(),
            detection: Default::default(),
            learner: Default::default(),
            train: Default::default(),
            fusion: Default::default(),
            acquisition: Default::default(),
            selection: Default::default(),
            run: Default::default(),
        }
    }

    /// Parse and validate. Parse errors carry the line and column of the
    /// offending key.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("schema_version {} unsupported, expected {SCHEMA_VERSION}", self.schema_version));
        }
        match self.track {
            TrackKind::Classification => self.data.validate().map_err(|e| ConfigError::Invalid(format!("data: {e}")))?,
            TrackKind::Detection => {
                self.detection.validate().map_err(|e| ConfigError::Invalid(format!("detection: {e}")))?
            }
        }
        if self.learner.hidden_dim == 0 || self.learner.mc_samples == 0 {
            return bad("learner.hidden_dim and learner.mc_samples must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.learner.dropout_rate) {
            return bad(format!("learner.dropout_rate must be in [0, 1), got {}", self.learner.dropout_rate));
        }
        self.train.validate().map_err(ConfigError::Invalid)?;
        self.selection.validate().map_err(ConfigError::Invalid)?;
        self.acquisition.validate().map_err(ConfigError::Invalid)?;
        if !(0.0..=1.0).contains(&self.fusion.iou_threshold) || self.fusion.cov_epsilon.is_nan() || self.fusion.cov_epsilon <= 0.0 {
            return bad("fusion.iou_threshold must be in [0, 1] and fusion.cov_epsilon > 0".into());
        }
        if self.run.seeds.is_empty() {
            return bad("run.seeds must list at least one seed".into());
        }
        if !(self.run.gap_level > 0.0 && self.run.gap_level <= 1.0) {
            return bad(format!("run.gap_level must be in (0, 1], got {}", self.run.gap_level));
        }
        if !(0.0..=1.0).contains(&self.run.map_iou_threshold) {
            return bad("run.map_iou_threshold must be in [0, 1]".into());
        }
        Ok(())
    }

    pub fn run_config(&self, strategy: Strategy) -> ALRunConfig {
        ALRunConfig {
            iterations: self.run.iterations,
            selection: SelectionConfig { strategy, ..self.selection },
            train: self.train,
        }
    }

    /// Identity of the dataset draw: runs with equal keys share datasets for
    /// equal seeds.
    pub fn dataset_key(&self) -> String {
        match self.track {
            TrackKind::Classification => format!("classification:{}", serde_json::to_string(&self.data).unwrap()),
            TrackKind::Detection => format!("detection:{}", serde_json::to_string(&self.detection).unwrap()),
        }
    }
}

/// Shipped presets.
pub fn preset(name: &str) -> Option<ExperimentConfig> {
    match name {
        "digits-analog" => Some(digits_analog()),
        "detection-analog" => Some(detection_analog()),
        _ => None,
    }
}

pub const PRESETS: [&str; 2] = ["digits-analog", "detection-analog"];

/// Classification track: 8 classes, pool of 2000, batches of 20, 20
/// iterations, label and covariate shift.
pub fn digits_analog() -> ExperimentConfig {
    let mut c = ExperimentConfig::new(TrackKind::Classification);
    c.name = "digits-analog".into();
    c.data = ClassificationBenchmarkSpec::default();
    c.selection = SelectionConfig { batch_size: 20, subsample_fraction: 0.25, ..SelectionConfig::default() };
    c.run = RunSettings { iterations: 20, seeds: (0..10).collect(), ..RunSettings::default() };
    c
}

/// Detection track: 3 classes, pool of 400 scenes, batches of 40, 8
/// iterations, avg+sum acquisition with sub-sampling.
pub fn detection_analog() -> ExperimentConfig {
    let mut c = ExperimentConfig::new(TrackKind::Detection);
    c.name = "detection-analog".into();
    c.detection = DetectionBenchmarkSpec::default();
    c.acquisition = AcquisitionConfig::default();
    c.selection = SelectionConfig { batch_size: 40, subsample_fraction: 0.5, ..SelectionConfig::default() };
    c.learner.mc_samples = 10;
    c.run = RunSettings { iterations: 8, seeds: (0..10).collect(), ..RunSettings::default() };
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::from_toml_str("schema_version = 1\ntrack = \"classification\"\n").unwrap();
        assert_eq!(c.data, ClassificationBenchmarkSpec::default());
        assert_eq!(c.selection, SelectionConfig::default());
    }

    #[test]
    fn presets_round_trip_through_toml() {
        for name in PRESETS {
            let c = preset(name).unwrap();
            c.validate().unwrap();
            let back = ExperimentConfig::from_toml_str(&c.to_toml_string()).unwrap();
            assert_eq!(back, c);
        }
    }

    #[test]
    fn unknown_strategy_names_the_key() {
        let text = "schema_version = 1\ntrack = \"classification\"\n\n[selection]\nstrategy = \"entropy\"\n";
        let e = ExperimentConfig::from_toml_str(text).unwrap_err().to_string();
        assert!(e.contains("strategy") && e.contains("entropy") && e.contains("line 5"), "{e}");
    }

    #[test]
    fn unknown_key_is_rejected() {
        let text = "schema_version = 1\ntrack = \"detection\"\n[run]\niterationz = 3\n";
        let e = ExperimentConfig::from_toml_str(text).unwrap_err().to_string();
        assert!(e.contains("iterationz"), "{e}");
    }

    #[test]
    fn invalid_values_are_rejected() {
        let e = ExperimentConfig::from_toml_str("schema_version = 2\ntrack = \"classification\"\n").unwrap_err();
        assert!(e.to_string().contains("schema_version"));
        let e = ExperimentConfig::from_toml_str("schema_version = 1\ntrack = \"classification\"\n[selection]\nsubsample_fraction = 0.0\n")
            .unwrap_err();
        assert!(e.to_string().contains("subsample_fraction"));
    }
}
