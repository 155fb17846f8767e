//! Run configuration file.
//!
//! A TOML document with a top-level `seed` and optional sections. Unknown
//! keys anywhere are rejected. Relative paths are resolved against the
//! directory holding the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::AugmentationSpec;
use crate::ensemble::{EnsembleConfig, DEFAULT_RIDGE};
use crate::error::{Error, Result};
use crate::evalx::SENSORY_VARIABLES;
use crate::model::{ExtractorSpec, ModelConfig};
use crate::nnkernel::OptimizerKind;
use crate::spectral::{NIR_RANGE, VISIBLE_RANGE};
use crate::synth::SynthConfig;
use crate::tuning::GridSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Drives every seeded step; may be supplied by `--seed` instead.
    pub seed: Option<u64>,
    #[serde(default)]
    pub paths: PathsSection,
    #[serde(default)]
    pub extractor: ExtractorSpec,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub augmentation: AugmentationSpec,
    #[serde(default)]
    pub tuning: GridSpec,
    #[serde(default)]
    pub spectral: SpectralSection,
    #[serde(default)]
    pub synth: SynthConfig,
    #[serde(default)]
    pub prepare: PrepareSection,
    #[serde(default)]
    pub correlate: CorrelateSection,
}

/// Every path is optional; unset inputs default to the matching output of
/// an earlier command under `output_dir`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub output_dir: Option<PathBuf>,
    /// Input of `prepare`: band-pair or stereo manifest.
    pub manifest: Option<PathBuf>,
    pub train_manifest: Option<PathBuf>,
    pub val_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    pub tune_manifest: Option<PathBuf>,
    pub raw_header: Option<PathBuf>,
    pub raw_data: Option<PathBuf>,
    pub white_header: Option<PathBuf>,
    pub white_data: Option<PathBuf>,
    pub dark_header: Option<PathBuf>,
    pub dark_data: Option<PathBuf>,
    /// Ripeness class (0-4) → mask PNG.
    pub masks: BTreeMap<String, PathBuf>,
    /// Stem of a single trained model (`<stem>.bstk` + `<stem>.toml`).
    pub model: Option<PathBuf>,
    pub ensemble: Option<PathBuf>,
    pub sensory: Option<PathBuf>,
    /// Band-pair manifest holding images of the sensory berries.
    pub sensory_manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub fc: (usize, usize),
    pub optimizer: OptimizerKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelSection {
            fc: m.fc,
            optimizer: m.optimizer,
            learning_rate: m.learning_rate,
            momentum: m.momentum,
            batch_size: m.batch_size,
            epochs: m.epochs,
            patience: m.patience,
        }
    }
}

impl ModelSection {
    pub fn to_config(&self, seed: u64) -> ModelConfig {
        ModelConfig {
            fc: self.fc,
            optimizer: self.optimizer,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            batch_size: self.batch_size,
            epochs: self.epochs,
            patience: self.patience,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleSection {
    pub learners: usize,
    pub ridge: f64,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        EnsembleSection {
            learners: 5,
            ridge: DEFAULT_RIDGE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectralSection {
    pub visible_range: (f64, f64),
    pub nir_range: (f64, f64),
}

impl Default for SpectralSection {
    fn default() -> Self {
        SpectralSection {
            visible_range: VISIBLE_RANGE,
            nir_range: NIR_RANGE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrepareSection {
    pub ratios: (f64, f64, f64),
    pub equalize_770: bool,
}

impl Default for PrepareSection {
    fn default() -> Self {
        PrepareSection {
            ratios: crate::dataset::DEFAULT_SPLIT_RATIOS,
            equalize_770: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfidenceSource {
    /// Use the confidence column of the sensory table.
    #[default]
    Table,
    /// Recompute confidences with the trained ensemble.
    Ensemble,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrelateSection {
    pub variables: Vec<String>,
    pub source: ConfidenceSource,
}

impl Default for CorrelateSection {
    fn default() -> Self {
        CorrelateSection {
            variables: SENSORY_VARIABLES.iter().map(|s| s.to_string()).collect(),
            source: ConfidenceSource::Table,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads, parses and resolves relative paths against the file's folder.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text).map_err(|e| e.context(path.display().to_string()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let p = &mut self.paths;
        for slot in [
            &mut p.output_dir,
            &mut p.manifest,
            &mut p.train_manifest,
            &mut p.val_manifest,
            &mut p.test_manifest,
            &mut p.tune_manifest,
            &mut p.raw_header,
            &mut p.raw_data,
            &mut p.white_header,
            &mut p.white_data,
            &mut p.dark_header,
            &mut p.dark_data,
            &mut p.model,
            &mut p.ensemble,
            &mut p.sensory,
            &mut p.sensory_manifest,
        ] {
            if let Some(path) = slot.as_mut() {
                fix(path);
            }
        }
        for path in p.masks.values_mut() {
            fix(path);
        }
        if let ExtractorSpec::LoadedFrozenConv { path } = &mut self.extractor {
            fix(path);
        }
    }

    pub fn model_config(&self, seed: u64) -> ModelConfig {
        self.model.to_config(seed)
    }

    pub fn ensemble_config(&self, seed: u64) -> EnsembleConfig {
        EnsembleConfig {
            learners: self.ensemble.learners,
            ridge: self.ensemble.ridge,
            seed,
            base: self.model_config(seed),
        }
    }

    /// SHA-256 of the canonical TOML rendering of the resolved config.
    pub fn digest(&self) -> Result<String> {
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        Ok(hex::encode(Sha256::digest(text.as_bytes())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let c = RunConfig::parse("seed = 3").unwrap();
        assert_eq!(c.seed, Some(3));
        assert_eq!(c.model_config(3).fc, (1024, 1024));
        assert_eq!(c.ensemble.learners, 5);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        for text in [
            "seed = 1\nsede = 2",
            "seed = 1\n[model]\nbatchsize = 4",
            "seed = 1\n[paths]\nmanfest = 'x'",
            "seed = 1\n[extractor]\nkind = 'deterministic_surrogate'\nseed = 1\noutput_dim = 8\nextra = 1",
        ] {
            let e = RunConfig::parse(text).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{text}");
        }
    }

    #[test]
    fn sections_parse() {
        let c = RunConfig::parse(
            r#"
seed = 9
[extractor]
kind = "deterministic_surrogate"
seed = 4
output_dim = 64
[model]
fc = [64, 32]
optimizer = "adagrad"
[augmentation]
max_rotation_deg = 0.0
[tuning]
fc = [[8, 8]]
k = 3
[paths.masks]
2 = "m2.png"
"#,
        )
        .unwrap();
        assert_eq!(
            c.extractor,
            ExtractorSpec::DeterministicSurrogate { seed: 4, output_dim: 64 }
        );
        assert_eq!(c.model.optimizer, OptimizerKind::AdaGrad);
        assert_eq!(c.augmentation.zoom, (0.2, 1.0));
        assert_eq!(c.tuning.k, 3);
        assert_eq!(c.paths.masks["2"], PathBuf::from("m2.png"));
    }

    #[test]
    fn digest_is_stable() {
        let a = RunConfig::parse("seed = 1\n[model]\nepochs = 3").unwrap();
        let b = RunConfig::parse("# comment\nseed   = 1\n\n[model]\nepochs = 3\n").unwrap();
        assert_eq!(a.digest().unwrap(), b.digest().unwrap());
        let c = RunConfig::parse("seed = 2\n[model]\nepochs = 3").unwrap();
        assert_ne!(a.digest().unwrap(), c.digest().unwrap());
    }
}
