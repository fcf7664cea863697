//! Normal-distribution estimation: aggregate registered support features and
//! fit one Gaussian per grid position.

mod aggregate;
mod archive;
mod grid;

use std::time::Instant;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

pub use aggregate::{aggregate_features, to_hwc, ChannelSubset, EstSource};
pub use archive::{read_stats, to_bytes, write_stats};
pub use grid::{fit_gaussian_grid, mahalanobis_dense, packed_len, GaussianGrid, GridAccumulator};

use crate::dataio::{apply_chain, resize, AugmentationConfig, ImageSample, SupportSet};
use crate::featnet::{AffineParams, StnMode, STAGE_CHANNELS};
use crate::kv::{self, KvMap};
use crate::regtrain::RegadModel;
use crate::{RegadError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimateConfig {
    pub epsilon: f64,
    pub est_source: EstSource,
    /// Keep a seeded random subset of this many channels.
    pub reduce_dims: Option<usize>,
    /// Seed of the channel subset.
    pub reduce_seed: u64,
    /// Images per forward pass and per accumulator merge.
    pub chunk_size: usize,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        EstimateConfig {
            epsilon: 0.01,
            est_source: EstSource::Stn,
            reduce_dims: None,
            reduce_seed: 0,
            chunk_size: 16,
        }
    }
}

/// Everything a scorer needs to check compatibility with a model.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMeta {
    pub category: String,
    pub k: usize,
    pub seed: u64,
    pub stn_mode: StnMode,
    pub side: usize,
    pub est_source: EstSource,
    pub channel_subset: Option<ChannelSubset>,
    pub augmentations: usize,
    /// SHA-256 of the checkpoint weights the grid was estimated with.
    pub checkpoint: String,
    pub adaptation_seconds: Option<f64>,
}

impl GridMeta {
    pub fn to_kv(&self) -> KvMap {
        let mut m = KvMap::new();
        m.insert("category".into(), self.category.clone());
        m.insert("k".into(), self.k.to_string());
        m.insert("seed".into(), self.seed.to_string());
        m.insert("stn_mode".into(), self.stn_mode.to_string());
        m.insert("side".into(), self.side.to_string());
        m.insert("est_source".into(), self.est_source.to_string());
        m.insert(
            "channel_subset".into(),
            self.channel_subset.as_ref().map_or_else(|| "all".into(), |s| kv::join(&s.0)),
        );
        m.insert("augmentations".into(), self.augmentations.to_string());
        m.insert("checkpoint".into(), self.checkpoint.clone());
        m.insert(
            "adaptation_seconds".into(),
            self.adaptation_seconds.map_or_else(|| "NA".into(), |s| format!("{s:.6}")),
        );
        m
    }

    pub fn from_kv(m: &KvMap) -> Result<Self> {
        let subset = match kv::get(m, "channel_subset")? {
            "all" => None,
            _ => Some(ChannelSubset(kv::get_list(m, "channel_subset")?)),
        };
        Ok(GridMeta {
            category: kv::get(m, "category")?.to_string(),
            k: kv::get_parsed(m, "k")?,
            seed: kv::get_parsed(m, "seed")?,
            stn_mode: kv::get(m, "stn_mode")?.parse()?,
            side: kv::get_parsed(m, "side")?,
            est_source: kv::get(m, "est_source")?.parse()?,
            channel_subset: subset,
            augmentations: kv::get_parsed(m, "augmentations")?,
            checkpoint: kv::get(m, "checkpoint")?.to_string(),
            adaptation_seconds: kv::get(m, "adaptation_seconds")?.parse().ok(),
        })
    }

    /// Fails unless `model` produces features this grid was fitted on.
    pub fn check_compatible(&self, model: &RegadModel) -> Result<()> {
        if self.stn_mode != model.mode() {
            return Err(RegadError::MetadataMismatch(format!(
                "stats use stn_mode {} but the checkpoint uses {}",
                self.stn_mode,
                model.mode()
            )));
        }
        if self.side != model.config.side {
            return Err(RegadError::MetadataMismatch(format!(
                "stats use side {} but the checkpoint uses {}",
                self.side, model.config.side
            )));
        }
        Ok(())
    }
}

/// A fitted grid with its metadata.
#[derive(Debug, Clone)]
pub struct FittedStats {
    pub grid: GaussianGrid,
    pub meta: GridMeta,
}

impl FittedStats {
    /// Checks model compatibility and the grid's spatial/channel shape.
    pub fn check_compatible(&self, model: &RegadModel) -> Result<()> {
        self.meta.check_compatible(model)?;
        let (h, w, c) = feature_shape(model, self.meta.est_source);
        let c = self.meta.channel_subset.as_ref().map_or(c, |s| s.0.len());
        let g = &self.grid;
        if (g.height, g.width, g.channels) != (h, w, c) {
            return Err(RegadError::MetadataMismatch(format!(
                "grid is {:?} but the checkpoint yields {:?}",
                (g.height, g.width, g.channels),
                (h, w, c)
            )));
        }
        Ok(())
    }
}

/// `(H, W, C)` of the maps produced for `source`.
pub fn feature_shape(model: &RegadModel, source: EstSource) -> (usize, usize, usize) {
    let sides = model.stage_sides();
    match source {
        EstSource::Stn => (sides[0], sides[0], STAGE_CHANNELS.iter().sum()),
        EstSource::Encoder => (sides[2], sides[2], *model.heads.widths().encoder.last().expect("widths")),
    }
}

/// Inference-mode feature maps (`H×W×C`) and predicted transforms of images.
pub fn extract_features(
    model: &RegadModel,
    images: &[&ImageSample],
    source: EstSource,
) -> Result<(Vec<Array3<f64>>, Vec<[AffineParams; 3]>)> {
    let out = model.embed(images)?;
    let n = out.batch_size()?;
    let params = (0..n).map(|b| out.params(b, model.mode())).collect::<Result<Vec<_>>>()?;
    let maps = match source {
        EstSource::Stn => out
            .feature_sets(model.mode())?
            .iter()
            .map(aggregate_features)
            .collect(),
        EstSource::Encoder => {
            let z = model.heads.encode(&out.post[2], false)?;
            (0..n)
                .map(|b| {
                    let t = z.get(b)?;
                    let (c, h, w) = t.dims3()?;
                    let v = t.flatten_all()?.to_vec1::<f32>()?;
                    let arr = Array3::from_shape_vec((c, h, w), v).expect("dims3 matches length");
                    Ok(to_hwc(arr.view(), h, w))
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    Ok((maps, params))
}

/// Fits the grid from an augmented pool built lazily from `support`.
///
/// `support` holds raw (unstandardized) images; they are resized to the
/// model's side before augmentation.
pub fn estimate_from_images(
    model: &RegadModel,
    support: &[ImageSample],
    aug: &AugmentationConfig,
    cfg: &EstimateConfig,
) -> Result<(GaussianGrid, Option<ChannelSubset>)> {
    if support.is_empty() {
        return Err(RegadError::InvalidInput("empty support set".into()));
    }
    if cfg.chunk_size == 0 {
        return Err(RegadError::Config("chunk_size must be positive".into()));
    }
    let (h, w, c) = feature_shape(model, cfg.est_source);
    let subset = cfg
        .reduce_dims
        .map(|d| ChannelSubset::random(c, d, cfg.reduce_seed))
        .transpose()?;
    let kept = subset.as_ref().map_or(c, |s| s.0.len());

    let resized: Vec<ImageSample> = support
        .iter()
        .map(|s| resize(s, model.config.side))
        .collect::<Result<_>>()?;
    let chains = aug.combinations();
    let jobs: Vec<(usize, usize)> = (0..resized.len())
        .flat_map(|i| (0..chains.len()).map(move |j| (i, j)))
        .collect();

    let mut acc = GridAccumulator::new(h, w, kept);
    for chunk in jobs.chunks(cfg.chunk_size) {
        let pool: Vec<ImageSample> = chunk
            .iter()
            .map(|&(i, j)| apply_chain(&resized[i], &chains[j]))
            .collect();
        let refs: Vec<&ImageSample> = pool.iter().collect();
        let (maps, _) = extract_features(model, &refs, cfg.est_source)?;
        let maps: Vec<Array3<f64>> = match &subset {
            Some(s) => maps.iter().map(|m| s.apply(m)).collect(),
            None => maps,
        };
        let views: Vec<_> = maps.iter().map(|m| m.view()).collect();
        acc.push(&views)?;
    }
    Ok((acc.finish(cfg.epsilon)?, subset))
}

/// Loads `support`, fits its grid and records the wall-clock adaptation time.
pub fn estimate(
    model: &RegadModel,
    checkpoint_hash: &str,
    support: &SupportSet,
    aug: &AugmentationConfig,
    cfg: &EstimateConfig,
) -> Result<FittedStats> {
    let start = Instant::now();
    let images = support.load()?;
    let (grid, subset) = estimate_from_images(model, &images, aug, cfg)?;
    let seconds = start.elapsed().as_secs_f64();
    log::info!(
        "estimated {}x{}x{} grid for `{}` from {} pooled maps in {seconds:.2}s",
        grid.height,
        grid.width,
        grid.channels,
        support.category,
        grid.n
    );
    Ok(FittedStats {
        grid,
        meta: GridMeta {
            category: support.category.clone(),
            k: support.k,
            seed: support.seed,
            stn_mode: model.mode(),
            side: model.config.side,
            est_source: cfg.est_source,
            channel_subset: subset,
            augmentations: aug.combination_count(),
            checkpoint: checkpoint_hash.to_string(),
            adaptation_seconds: Some(seconds),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn meta_round_trip() {
        let meta = GridMeta {
            category: "bottle".into(),
            k: 2,
            seed: 4,
            stn_mode: StnMode::RotationScale,
            side: 224,
            est_source: EstSource::Encoder,
            channel_subset: Some(ChannelSubset(vec![1, 5, 9])),
            augmentations: 270,
            checkpoint: "abc".into(),
            adaptation_seconds: None,
        };
        assert_eq!(GridMeta::from_kv(&meta.to_kv()).unwrap(), meta);
    }

    #[test]
    fn archive_is_bit_exact_after_one_round_trip() {
        let feats: Vec<Array3<f64>> = (0..5)
            .map(|n| Array3::from_shape_fn((2, 2, 3), |(i, j, k)| ((n * 7 + i * 3 + j * 5 + k) % 11) as f64 / 3.0))
            .collect();
        let grid = fit_gaussian_grid(&feats, 0.01).unwrap();
        let meta = GridMeta {
            category: "c".into(),
            k: 1,
            seed: 0,
            stn_mode: StnMode::Affine,
            side: 8,
            est_source: EstSource::Stn,
            channel_subset: None,
            augmentations: 5,
            checkpoint: "0".into(),
            adaptation_seconds: Some(0.5),
        };
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.regad");
        let p2 = dir.path().join("b.regad");
        write_stats(&p1, &grid, &meta).unwrap();
        let (g1, m1) = read_stats(&p1).unwrap();
        assert_eq!(m1, meta);
        assert_eq!(g1.epsilon, 0.01);
        write_stats(&p2, &g1, &m1).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        for (a, b) in g1.mean.iter().zip(&grid.mean) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }
}
