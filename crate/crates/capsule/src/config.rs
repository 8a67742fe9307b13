//! Run configuration: one TOML file drives the whole pipeline. A snapshot
//! of the resolved config is written into every output directory so runs
//! can be reproduced from their artifacts alone.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::TierParams;
use crate::catalog::ClassCatalog;
use crate::curriculum::RemainderMode;
use crate::error::{CapsuleError, Result};
use crate::model::{Architecture, HeadKind, ModelSpec};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// Directory in `split/class/images` layout; alternative to `csv`.
    pub root: Option<PathBuf>,
    /// Manifest CSV; alternative to `root`.
    pub csv: Option<PathBuf>,
    /// Catalog JSON; the built-in ten-class catalog when absent.
    pub catalog: Option<PathBuf>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub low_threshold: usize,
    pub high_threshold: usize,
    pub target_count: usize,
    pub cap_multiplier: usize,
    pub params: TierParams,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            low_threshold: 500,
            high_threshold: 3000,
            target_count: 3000,
            cap_multiplier: 25,
            params: TierParams::default(),
        }
    }
}

/// Which counts order the curriculum: pre-augmentation originals (default)
/// or the post-augmentation totals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderingSource {
    Original,
    PostAugment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurriculumConfig {
    pub remainder_mode: RemainderMode,
    pub ordering_source: OrderingSource,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        CurriculumConfig {
            remainder_mode: RemainderMode::Aggregate,
            ordering_source: OrderingSource::Original,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub architecture: Architecture,
    /// Default is per-architecture when absent.
    pub input_size: Option<usize>,
    pub pretrained: bool,
    pub head: HeadKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            architecture: Architecture::TinyHybrid,
            input_size: None,
            pretrained: false,
            head: HeadKind::Linear,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Master seed; every stochastic choice in a run derives from it.
    pub seed: u64,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default)]
    pub curriculum: CurriculumConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

pub const SNAPSHOT_FILE: &str = "config_snapshot.toml";
pub const AUGMENTED_MANIFEST_FILE: &str = "manifest_augmented.csv";

impl RunConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CapsuleError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut config: RunConfig = toml::from_str(&text).map_err(|e| {
            CapsuleError::Config(format!("bad config {}: {e}", path.display()))
        })?;
        // The top-level seed governs the run.
        config.train.seed = config.seed;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| CapsuleError::Config(format!("serialize config: {e}")))
    }

    /// Check paths and numeric invariants; called by every command.
    pub fn validate(&self) -> Result<()> {
        match (&self.dataset.root, &self.dataset.csv) {
            (None, None) => {
                return Err(CapsuleError::Config(
                    "dataset needs either `root` or `csv`".into(),
                ))
            }
            (Some(root), _) if !root.exists() => {
                return Err(CapsuleError::Config(format!(
                    "dataset root does not exist: {}",
                    root.display()
                )))
            }
            (_, Some(csv)) if self.dataset.root.is_none() && !csv.exists() => {
                return Err(CapsuleError::Config(format!(
                    "dataset csv does not exist: {}",
                    csv.display()
                )))
            }
            _ => {}
        }
        if let Some(catalog) = &self.dataset.catalog {
            if !catalog.exists() {
                return Err(CapsuleError::Config(format!(
                    "catalog file does not exist: {}",
                    catalog.display()
                )));
            }
        }
        if self.augment.low_threshold == 0 || self.augment.low_threshold >= self.augment.high_threshold {
            return Err(CapsuleError::Config(format!(
                "augment thresholds must satisfy 0 < low < high, got ({}, {})",
                self.augment.low_threshold, self.augment.high_threshold
            )));
        }
        if self.augment.target_count == 0 {
            return Err(CapsuleError::Config("augment target_count must be positive".into()));
        }
        self.train.validate()?;
        Ok(())
    }

    pub fn load_catalog(&self) -> Result<ClassCatalog> {
        match &self.dataset.catalog {
            Some(path) => ClassCatalog::from_json_file(path),
            None => Ok(ClassCatalog::default_vce()),
        }
    }

    /// Dataset source path: the directory when given, otherwise the CSV.
    pub fn dataset_source(&self) -> &Path {
        self.dataset
            .root
            .as_deref()
            .or(self.dataset.csv.as_deref())
            .expect("validated: root or csv present")
    }

    pub fn model_spec(&self, num_classes: usize) -> Result<ModelSpec> {
        let mut spec = ModelSpec::new(self.model.architecture, num_classes)
            .with_head(self.model.head)
            .with_pretrained(self.model.pretrained);
        if let Some(s) = self.model.input_size {
            spec = spec.with_input_size(s);
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Train config with the run seed applied and the device possibly
    /// overridden by `CAPSULE_DEVICE`.
    pub fn train_config(&self) -> Result<TrainConfig> {
        let mut tc = self.train.clone();
        tc.seed = self.seed;
        if let Ok(device) = std::env::var("CAPSULE_DEVICE") {
            tc.device = device.parse()?;
        }
        Ok(tc)
    }

    pub fn out_dir(&self) -> &Path {
        &self.dataset.out_dir
    }

    pub fn augmented_manifest_path(&self) -> PathBuf {
        self.dataset.out_dir.join(AUGMENTED_MANIFEST_FILE)
    }

    /// Write the resolved config into the output directory.
    pub fn write_snapshot(&self) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.dataset.out_dir)
            .map_err(|e| CapsuleError::io(&self.dataset.out_dir, e))?;
        let path = self.dataset.out_dir.join(SNAPSHOT_FILE);
        std::fs::write(&path, self.to_toml_string()?).map_err(|e| CapsuleError::io(&path, e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_toml(dir: &Path) -> String {
        format!(
            "seed = 7\n[dataset]\nroot = {:?}\nout_dir = {:?}\n",
            dir.join("data").to_str().unwrap(),
            dir.join("out").to_str().unwrap()
        )
    }

    #[test]
    fn parse_minimal_config_with_defaults() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("data")).unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, minimal_toml(dir.path())).unwrap();
        let config = RunConfig::from_toml_file(&path).unwrap();
        assert_eq!(config.seed, 7);
        assert_eq!(config.train.seed, 7);
        assert_eq!(config.augment.target_count, 3000);
        assert_eq!(config.model.architecture, Architecture::TinyHybrid);
        config.validate().unwrap();
    }

    #[test]
    fn missing_seed_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[dataset]\nroot = \"x\"\nout_dir = \"y\"\n").unwrap();
        assert!(matches!(
            RunConfig::from_toml_file(&path),
            Err(CapsuleError::Config(_))
        ));
    }

    #[test]
    fn missing_dataset_path_fails_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, minimal_toml(dir.path())).unwrap();
        let config = RunConfig::from_toml_file(&path).unwrap();
        // data/ not created -> validation must name the path.
        let err = config.validate().unwrap_err();
        assert!(err.to_string().contains("data"));
    }

    #[test]
    fn snapshot_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("data")).unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, minimal_toml(dir.path())).unwrap();
        let config = RunConfig::from_toml_file(&path).unwrap();
        let snap = config.write_snapshot().unwrap();
        let back: RunConfig = toml::from_str(&std::fs::read_to_string(&snap).unwrap()).unwrap();
        assert_eq!(config, back);
    }

    #[test]
    fn device_env_override() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("data")).unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, minimal_toml(dir.path())).unwrap();
        let config = RunConfig::from_toml_file(&path).unwrap();
        std::env::set_var("CAPSULE_DEVICE", "cpu");
        assert!(config.train_config().is_ok());
        std::env::set_var("CAPSULE_DEVICE", "gpu7");
        assert!(config.train_config().is_err());
        std::env::remove_var("CAPSULE_DEVICE");
    }
}
