//! TOML run configuration. Every field has a default and unknown keys are
//! rejected. Relative paths resolve against the configuration file's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{LossWeights, Variant};
use crate::nn::{DiscriminatorConfig, FeatureNetConfig, GeneratorConfig};
use crate::optim::AdamConfig;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Preset for the adversarial phase; the pretraining phase always uses GEN.
    pub variant: Variant,
    /// Overrides the preset's weights for the adversarial phase.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<LossWeights>,
    pub seed: u64,
    pub train_manifest: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_manifest: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Generator checkpoint to start the adversarial phase from when there
    /// is no pretraining phase.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warm_start: Option<PathBuf>,
    /// Checkpoint with a `features` section replacing the seeded feature net.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feature_weights: Option<PathBuf>,
    pub train: TrainConfig,
    pub adam: AdamConfig,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub features: FeatureNetConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            variant: Variant::CandyL1_9P,
            weights: None,
            seed: 0,
            train_manifest: "train.jsonl".into(),
            val_manifest: None,
            out_dir: "runs".into(),
            warm_start: None,
            feature_weights: None,
            train: TrainConfig::default(),
            adam: AdamConfig::default(),
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            features: FeatureNetConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    /// Parses `path` and resolves relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.train_manifest);
        fix(&mut cfg.out_dir);
        for p in [
            &mut cfg.val_manifest,
            &mut cfg.warm_start,
            &mut cfg.feature_weights,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        Ok(cfg)
    }

    /// Weights of the adversarial phase.
    pub fn phase2_weights(&self) -> LossWeights {
        self.weights.unwrap_or_else(|| self.variant.weights())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.adam.validate()?;
        self.phase2_weights().validate()?;
        if self.phase2_weights().tap > self.features.widths.len() {
            return Err(Error::Config(format!(
                "feature tap {} exceeds the {} feature blocks",
                self.phase2_weights().tap,
                self.features.widths.len()
            )));
        }
        Ok(())
    }
}
