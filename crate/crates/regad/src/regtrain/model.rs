//! The complete trainable model (feature net + registration heads) and its
//! on-disk checkpoint: `model.safetensors` plus a `meta.txt` sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use sha2::{Digest, Sha256};

use super::heads::{HeadWidths, RegistrationHeads};
use crate::dataio::{preprocess, to_batch_tensor, ImageSample, Normalization};
use crate::featnet::{
    BackboneInit, FeatureNet, ParamStore, StageOutputs, StnChaining, StnMode, STAGE_CHANNELS,
    STAGE_STRIDES,
};
use crate::kv::{self, KvMap};
use crate::{RegadError, Result};

pub const MODEL_FILE: &str = "model.safetensors";
pub const META_FILE: &str = "meta.txt";
const FORMAT_VERSION: &str = "1";

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub stn_mode: StnMode,
    pub chaining: StnChaining,
    /// Input side length in pixels.
    pub side: usize,
    pub normalization: Normalization,
    pub widths: HeadWidths,
    pub backbone: BackboneInit,
    /// Seed of the parameter initializer.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            stn_mode: StnMode::RotationScale,
            chaining: StnChaining::Post,
            side: 224,
            normalization: Normalization::IMAGENET,
            widths: HeadWidths::default(),
            backbone: BackboneInit::Pretrained(BackboneInit::default_cache_path()),
            seed: 0,
        }
    }
}

/// Training summary stored alongside the weights.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainSummary {
    pub epochs: usize,
    pub seed: u64,
    pub loss_final: Option<f64>,
}

pub struct RegadModel {
    pub store: ParamStore,
    pub net: FeatureNet,
    pub heads: RegistrationHeads,
    pub config: ModelConfig,
    pub summary: TrainSummary,
}

impl RegadModel {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        let mut store = ParamStore::new(config.seed, DType::F32, &Device::Cpu);
        let net = FeatureNet::new(&mut store, config.stn_mode, config.chaining)?;
        let heads = RegistrationHeads::new(&mut store, &config.widths)?;
        if let BackboneInit::Pretrained(path) = &config.backbone {
            let n = FeatureNet::load_backbone(&mut store, path)?;
            log::info!("loaded {n} backbone tensors from {}", path.display());
        }
        Ok(RegadModel {
            store,
            net,
            heads,
            config: config.clone(),
            summary: TrainSummary::default(),
        })
    }

    pub fn mode(&self) -> StnMode {
        self.config.stn_mode
    }

    /// Feature-map side lengths of the three stages.
    pub fn stage_sides(&self) -> [usize; 3] {
        STAGE_STRIDES.map(|s| self.config.side.div_ceil(s))
    }

    /// Resizes and standardizes raw images into a `(B, 3, side, side)` batch.
    pub fn batch(&self, images: &[&ImageSample]) -> Result<Tensor> {
        let prepared: Vec<ImageSample> = images
            .iter()
            .map(|s| preprocess(s, self.config.side, Some(&self.config.normalization)))
            .collect::<Result<_>>()?;
        let refs: Vec<&ImageSample> = prepared.iter().collect();
        to_batch_tensor(&refs, self.store.device())
    }

    /// Inference-mode forward pass over raw images.
    pub fn embed(&self, images: &[&ImageSample]) -> Result<StageOutputs> {
        let x = self.batch(images)?;
        self.net.forward(&x, false)
    }

    pub fn metadata(&self) -> KvMap {
        let c = &self.config;
        let mut m = KvMap::new();
        m.insert("format_version".into(), FORMAT_VERSION.into());
        m.insert("stn_mode".into(), c.stn_mode.to_string());
        m.insert("stn_chaining".into(), c.chaining.to_string());
        m.insert("side".into(), c.side.to_string());
        m.insert("norm_mean".into(), kv::join(&c.normalization.mean));
        m.insert("norm_std".into(), kv::join(&c.normalization.std));
        m.insert("encoder_widths".into(), kv::join(&c.widths.encoder));
        m.insert("predictor_widths".into(), kv::join(&c.widths.predictor));
        m.insert("stage_channels".into(), kv::join(&STAGE_CHANNELS));
        m.insert("stage_sides".into(), kv::join(&self.stage_sides()));
        m.insert(
            "backbone_init".into(),
            match &c.backbone {
                BackboneInit::Pretrained(p) => format!("pretrained:{}", p.display()),
                BackboneInit::Random => "random".into(),
            },
        );
        m.insert("init_seed".into(), c.seed.to_string());
        m.insert("epochs".into(), self.summary.epochs.to_string());
        m.insert("seed".into(), self.summary.seed.to_string());
        m.insert(
            "loss_final".into(),
            self.summary
                .loss_final
                .map_or_else(|| "NA".to_string(), |l| format!("{l:.8}")),
        );
        m
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| RegadError::io(dir, e))?;
        let weights = dir.join(MODEL_FILE);
        self.store.save(&weights)?;
        kv::write(&dir.join(META_FILE), &self.metadata())?;
        Ok(weights)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join(META_FILE);
        if !meta_path.is_file() {
            return Err(RegadError::Checkpoint(format!("{} not found", meta_path.display())));
        }
        let meta = kv::read(&meta_path)?;
        let version = kv::get(&meta, "format_version")?;
        if version != FORMAT_VERSION {
            return Err(RegadError::Checkpoint(format!("unsupported format_version {version}")));
        }
        let list3 = |key: &str| -> Result<[f32; 3]> {
            let v: Vec<f32> = kv::get_list(&meta, key)?;
            v.try_into()
                .map_err(|_| RegadError::MetadataMismatch(format!("`{key}` needs three values")))
        };
        let config = ModelConfig {
            stn_mode: kv::get(&meta, "stn_mode")?.parse()?,
            chaining: kv::get(&meta, "stn_chaining")?.parse()?,
            side: kv::get_parsed(&meta, "side")?,
            normalization: Normalization {
                mean: list3("norm_mean")?,
                std: list3("norm_std")?,
            },
            widths: HeadWidths {
                encoder: kv::get_list(&meta, "encoder_widths")?,
                predictor: kv::get_list(&meta, "predictor_widths")?,
            },
            backbone: BackboneInit::Random,
            seed: kv::get_parsed(&meta, "init_seed")?,
        };
        let mut model = RegadModel::new(&config)?;
        model.store.load(&dir.join(MODEL_FILE))?;
        model.summary = TrainSummary {
            epochs: kv::get_parsed(&meta, "epochs")?,
            seed: kv::get_parsed(&meta, "seed")?,
            loss_final: kv::get(&meta, "loss_final")?.parse().ok(),
        };
        Ok(model)
    }
}

/// SHA-256 of a file, hex encoded.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| RegadError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// SHA-256 of a checkpoint's weight file.
pub fn checkpoint_hash(dir: &Path) -> Result<String> {
    file_sha256(&dir.join(MODEL_FILE))
}
