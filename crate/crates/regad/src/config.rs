//! Run configuration: every tunable in one TOML document.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataio::{AugmentationConfig, DatasetKind, Normalization};
use crate::evalkit::PixelAucMode;
use crate::featnet::{BackboneInit, StnChaining, StnMode};
use crate::normest::EstimateConfig;
use crate::regtrain::{HeadWidths, ModelConfig, TrainConfig};
use crate::scoring::ScoreConfig;
use crate::{RegadError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneSource {
    Pretrained,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub kind: DatasetKind,
    /// Input side length after resizing.
    pub side: usize,
    pub normalization: Normalization,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            kind: DatasetKind::Mvtec,
            side: 224,
            normalization: Normalization::IMAGENET,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub stn_mode: StnMode,
    pub stn_chaining: StnChaining,
    pub backbone: BackboneSource,
    /// Overrides `$REGAD_CACHE/resnet18.safetensors`.
    pub backbone_path: Option<PathBuf>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            stn_mode: StnMode::RotationScale,
            stn_chaining: StnChaining::Post,
            backbone: BackboneSource::Pretrained,
            backbone_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub k: usize,
    pub runs: usize,
    pub pixel_auc: PixelAucMode,
    /// When false, timing columns are written as `NA`.
    pub record_timing: bool,
    /// Empty means every category found under the data root.
    pub categories: Vec<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k: 2,
            runs: 10,
            pixel_auc: PixelAucMode::Pooled,
            record_timing: true,
            categories: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Global seed: parameter init, pair sampling and the base of run seeds.
    pub seed: u64,
    pub jobs: usize,
    pub data: DataConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub augment: AugmentationConfig,
    pub estimate: EstimateConfig,
    pub score: ScoreConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            jobs: 1,
            data: DataConfig::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            augment: AugmentationConfig::default(),
            estimate: EstimateConfig::default(),
            score: ScoreConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| RegadError::io(path, e))?;
        toml::from_str(&text).map_err(|e| RegadError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| RegadError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.data.side < 16 {
            return Err(RegadError::Config(format!("side {} is below 16", self.data.side)));
        }
        if self.eval.k == 0 || self.eval.runs == 0 {
            return Err(RegadError::Config("k and runs must be positive".into()));
        }
        if !(self.estimate.epsilon > 0.0) {
            return Err(RegadError::Config(format!(
                "epsilon must be positive, got {}",
                self.estimate.epsilon
            )));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            stn_mode: self.model.stn_mode,
            chaining: self.model.stn_chaining,
            side: self.data.side,
            normalization: self.data.normalization,
            widths: HeadWidths::default(),
            backbone: match self.model.backbone {
                BackboneSource::Random => BackboneInit::Random,
                BackboneSource::Pretrained => BackboneInit::Pretrained(
                    self.model
                        .backbone_path
                        .clone()
                        .unwrap_or_else(BackboneInit::default_cache_path),
                ),
            },
            seed: self.seed,
        }
    }

    /// Seed of evaluation run `r`.
    pub fn run_seed(&self, r: usize) -> u64 {
        self.seed + r as u64
    }
}
