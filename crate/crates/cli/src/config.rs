use std::path::{Path, PathBuf};

use esr_core::classifier::{ModelConfig, TrainConfig};
use esr_core::evaluation::CvConfig;
use esr_core::explain::HotspotThresholds;
use esr_core::synth::GeneratorSpec;
use esr_core::View;
use serde::{Deserialize, Serialize};

use crate::ValidationError;

pub const SCHEMA_VERSION: u32 = 1;

/// Everything needed to re-execute a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Restricts every command to one view; both views when absent.
    pub view: Option<View>,
    /// Parent directory for timestamped run directories when `--out` is absent.
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub generator: GeneratorSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub evaluation: CvConfig,
    pub explain: ExplainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            view: None,
            out_dir: PathBuf::from("runs"),
            data: DataConfig::default(),
            generator: GeneratorSpec::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            evaluation: CvConfig::default(),
            explain: ExplainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Existing manifest CSV. When absent, commands read `corpus/manifest.csv`
    /// inside the run directory, as written by `synth`.
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    pub thresholds: HotspotThresholds,
    /// Images to explain: the held-out split recorded by `train`, or all.
    pub subset: Subset,
    pub max_images: Option<usize>,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig { thresholds: HotspotThresholds::default(), subset: Subset::Test, max_images: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Test,
    All,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub view: Option<View>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ValidationError> {
        // Read the version first so an old file fails on the version, not on a field.
        let raw: toml::Table = toml::from_str(text).map_err(|e| ValidationError(format!("config: {e}")))?;
        match raw.get("schema_version") {
            Some(toml::Value::Integer(v)) if *v == SCHEMA_VERSION as i64 => {}
            Some(v) => return Err(ValidationError(format!("unsupported schema_version {v}, expected {SCHEMA_VERSION}"))),
            None => return Err(ValidationError("config is missing schema_version".into())),
        }
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ValidationError(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ValidationError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ValidationError(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), ValidationError> {
        if let Some(view) = o.view {
            self.view = Some(view);
        }
        if let Some(seed) = o.seed {
            self.generator.seed = seed;
            self.evaluation.seed = seed;
        }
        if let Some(epochs) = o.epochs {
            self.train.epochs = epochs;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        let v = |e: &dyn std::fmt::Display| ValidationError(e.to_string());
        if self.schema_version != SCHEMA_VERSION {
            return Err(ValidationError(format!("unsupported schema_version {}", self.schema_version)));
        }
        self.generator.validate().map_err(|e| v(&e))?;
        self.model.validate().map_err(|e| v(&e))?;
        self.train.validate().map_err(|e| v(&e))?;
        self.evaluation.validate().map_err(|e| v(&e))?;
        self.explain.thresholds.validate().map_err(|e| v(&e))?;
        Ok(())
    }

    /// Views the commands act on.
    pub fn views(&self) -> Vec<View> {
        match self.view {
            Some(v) => vec![v],
            None => View::ALL.to_vec(),
        }
    }

    pub fn generator_spec(&self) -> GeneratorSpec {
        match self.view {
            Some(v) => self.generator.restricted_to(v),
            None => self.generator.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = RunConfig::from_toml("schema_version = 1\nview = \"section\"\n[train]\nepochs = 3\n").unwrap();
        assert_eq!(cfg.view, Some(View::Section));
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.batch_size, 8);
        assert_eq!(cfg.evaluation, CvConfig::default());
    }

    #[test]
    fn rejects_bad_files() {
        assert!(RunConfig::from_toml("view = \"surface\"").is_err());
        assert!(RunConfig::from_toml("schema_version = 2").is_err());
        assert!(RunConfig::from_toml("schema_version = 1\nunknown = 3").is_err());
        assert!(RunConfig::from_toml("schema_version = 1\n[evaluation]\ntest_fraction = 1.5").is_err());
        assert!(RunConfig::from_toml("schema_version = 1\n[explain.thresholds]\nhot = 0.0").is_err());
    }

    #[test]
    fn overrides_take_precedence() {
        let mut cfg = RunConfig::default();
        cfg.apply(&Overrides { view: Some(View::Surface), seed: Some(9), epochs: Some(0) }).unwrap();
        assert_eq!(cfg.views(), vec![View::Surface]);
        assert_eq!((cfg.generator.seed, cfg.evaluation.seed, cfg.train.epochs), (9, 9, 0));
        assert!(cfg.generator_spec().classes.iter().all(|q| q.view == View::Surface));
    }
}
