//! Run configuration: one TOML file covering data handling, the generator,
//! the model, and training, plus dotted-path command-line overrides.
//!
//! Unknown keys are rejected everywhere so a typo cannot silently fall back
//! to a default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::synth::SynthSpec;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// 5:1:4 of the normal windows into train/validation/test; anomalies
    /// all go to test.
    Ratio,
    /// Hold one subject out as the test set; other subjects' normals split
    /// 5:1 into train/validation.
    Loso,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Input CSV; commands that read data require it.
    pub path: Option<PathBuf>,
    /// Window step; `None` means the window length (disjoint windows).
    pub stride: Option<usize>,
    /// Longest interior NaN run repaired by linear interpolation.
    pub max_gap: usize,
    pub split: SplitMode,
    /// Test subject for [`SplitMode::Loso`].
    pub holdout: Option<String>,
    /// Fraction of training windows perturbed by Gaussian noise after
    /// normalization; 0 disables.
    pub noise_ratio: f64,
    pub noise_sigma: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            path: None,
            stride: None,
            max_gap: 3,
            split: SplitMode::Ratio,
            holdout: None,
            noise_ratio: 0.0,
            noise_sigma: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub synth: SynthSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            data: DataConfig::default(),
            synth: SynthSpec::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    /// Desk-scale preset: tiny model, tiny data, seconds to train.
    pub fn miniature() -> Self {
        RunConfig {
            seed: 7,
            model: ModelConfig::miniature(),
            synth: SynthSpec {
                n_signals: 3,
                n_normal: 80,
                n_anomalous: 20,
                window_len: 24,
                segment_len: 8,
                ..SynthSpec::default()
            },
            train: TrainConfig {
                batch_size: 8,
                max_epochs: 15,
                patience: 5,
                lr: 1e-2,
                grad_clip: Some(5.0),
                ..TrainConfig::default()
            },
            ..RunConfig::default()
        }
    }

    /// The self-contained benchmark the acceptance gate runs.
    pub fn synthetic_benchmark() -> Self {
        RunConfig {
            seed: 7,
            model: ModelConfig::synthetic_benchmark(),
            synth: SynthSpec::default(),
            train: TrainConfig {
                max_epochs: 40,
                patience: 10,
                lr: 1e-2,
                grad_clip: Some(5.0),
                ..TrainConfig::default()
            },
            ..RunConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.data.split == SplitMode::Loso && self.data.holdout.is_none() {
            return Err(Error::Config {
                detail: "split = \"loso\" requires data.holdout".to_string(),
            });
        }
        if let Some(0) = self.data.stride {
            return Err(Error::Config { detail: "data.stride must be positive".to_string() });
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config { detail: format!("{}: {e}", path.display()) })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Config { detail: e.to_string() })?;
        std::fs::write(path, text).map_err(|e| Error::file(path, e))
    }

    /// Apply `key=value` overrides, keys given as dotted paths into the
    /// TOML structure (`train.lr=0.01`, `model.lambda_mmd=0`). Values are
    /// parsed as TOML scalars, falling back to a bare string.
    pub fn with_overrides(&self, sets: &[String]) -> Result<RunConfig> {
        if sets.is_empty() {
            return Ok(self.clone());
        }
        let mut root = toml::Value::try_from(self)
            .map_err(|e| Error::Config { detail: e.to_string() })?;
        for kv in sets {
            let (key, value) = kv.split_once('=').ok_or_else(|| Error::Config {
                detail: format!("override {kv:?} is not KEY=VALUE"),
            })?;
            set_path(&mut root, key.trim(), parse_scalar(value.trim()))?;
        }
        root.try_into().map_err(|e| Error::Config { detail: e.to_string() })
    }
}

fn parse_scalar(s: &str) -> toml::Value {
    match format!("v = {s}").parse::<toml::Table>() {
        Ok(table) => table["v"].clone(),
        Err(_) => toml::Value::String(s.to_string()),
    }
}

fn set_path(root: &mut toml::Value, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config { detail: format!("bad override key {key:?}") });
    }
    let mut cur = root;
    for part in &parts[..parts.len() - 1] {
        cur = cur
            .as_table_mut()
            .and_then(|t| t.get_mut(*part))
            .ok_or_else(|| Error::Config { detail: format!("unknown config section {part:?} in {key:?}") })?;
    }
    let table = cur
        .as_table_mut()
        .ok_or_else(|| Error::Config { detail: format!("{key:?} does not address a table entry") })?;
    // Inserting a previously absent key is fine (optional fields are
    // omitted from the serialized tree); unknown keys are rejected when the
    // tree is deserialized back into the typed config.
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_config_files_equal_the_presets() {
        let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        assert_eq!(RunConfig::load(&dir.join("miniature.toml")).unwrap(), RunConfig::miniature());
        assert_eq!(RunConfig::load(&dir.join("benchmark.toml")).unwrap(), RunConfig::synthetic_benchmark());
    }

    #[test]
    fn presets_validate() {
        RunConfig::default().validate().unwrap();
        RunConfig::miniature().validate().unwrap();
        RunConfig::synthetic_benchmark().validate().unwrap();
    }

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig::miniature();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.toml");
        cfg.save(&path).unwrap();
        assert_eq!(RunConfig::load(&path).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.toml");
        std::fs::write(&path, "seed = 1\n[train]\nlearning_rate = 0.1\n").unwrap();
        let err = RunConfig::load(&path).unwrap_err();
        assert!(matches!(err, Error::Config { .. }), "{err}");
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = RunConfig::load(Path::new("/no/such/config.toml")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("/no/such/config.toml"));
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let cfg = RunConfig::default();
        let out = cfg
            .with_overrides(&[
                "seed=99".to_string(),
                "train.lr=0.5".to_string(),
                "model.lambda_mmd=0".to_string(),
                "data.split=loso".to_string(),
                "data.holdout=s3".to_string(),
                "model.mmd_bandwidth=2.5".to_string(),
            ])
            .unwrap();
        assert_eq!(out.seed, 99);
        assert_eq!(out.train.lr, 0.5);
        assert_eq!(out.model.lambda_mmd, 0.0);
        assert_eq!(out.data.split, SplitMode::Loso);
        assert_eq!(out.data.holdout.as_deref(), Some("s3"));
        assert_eq!(out.model.mmd_bandwidth, Some(2.5));
    }

    #[test]
    fn bad_overrides_are_rejected() {
        let cfg = RunConfig::default();
        assert!(cfg.with_overrides(&["nonsense".to_string()]).is_err());
        assert!(cfg.with_overrides(&["train.warp=1".to_string()]).is_err());
        assert!(cfg.with_overrides(&["bogus.lr=1".to_string()]).is_err());
        assert!(cfg.with_overrides(&["seed=not_a_number".to_string()]).is_err());
    }

    #[test]
    fn loso_without_holdout_is_invalid() {
        let cfg = RunConfig::default()
            .with_overrides(&["data.split=loso".to_string()])
            .unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config { .. })));
    }
}
