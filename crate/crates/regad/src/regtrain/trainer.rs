use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use candle_core::{Device, Tensor};
use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::registration_loss;
use super::model::{RegadModel, TrainSummary};
use super::optim::{cosine_lr, MomentumSgd};
use super::pairs::PairSampler;
use crate::dataio::{resize, Normalization, SampleRecord};
use crate::featnet::BACKBONE_PREFIX;
use crate::{RegadError, Result};

/// Per-channel spread of `z` below which a collapse warning is logged.
pub const COLLAPSE_STD: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
    pub freeze_backbone: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 32,
            lr: 1e-4,
            momentum: 0.9,
            seed: 0,
            freeze_backbone: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(RegadError::Config("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(RegadError::Config("batch_size must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(RegadError::Config(format!("invalid learning rate {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(RegadError::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, pool_size: usize) -> usize {
        pool_size.div_ceil(self.batch_size).max(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub steps: Vec<StepRecord>,
    /// Mean loss of each epoch, in order.
    pub epoch_losses: Vec<f64>,
    pub collapse_warnings: usize,
}

/// Training images resized once and kept as 8-bit RGB.
struct ImageCache {
    images: Vec<Array3<u8>>,
    side: usize,
    norm: Normalization,
}

impl ImageCache {
    fn build(records: &[SampleRecord], side: usize, norm: Normalization) -> Result<Self> {
        let images = records
            .par_iter()
            .map(|r| {
                let s = resize(&r.load()?, side)?;
                Ok(s.pixels.mapv(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ImageCache { images, side, norm })
    }

    fn batch(&self, idx: &[usize], device: &Device) -> Result<Tensor> {
        let n = self.side * self.side;
        let mut data = Vec::with_capacity(idx.len() * 3 * n);
        for &i in idx {
            let img = &self.images[i];
            for c in 0..3 {
                let (m, s) = (self.norm.mean[c], self.norm.std[c]);
                data.extend(
                    img.index_axis(ndarray::Axis(2), c)
                        .iter()
                        .map(|&v| (f32::from(v) / 255.0 - m) / s),
                );
            }
        }
        Ok(Tensor::from_vec(data, (idx.len(), 3, self.side, self.side), device)?)
    }
}

/// Mean over channels of the across-batch standard deviation of spatially
/// averaged `z`.
fn channel_spread(z: &Tensor) -> Result<f64> {
    if z.dim(0)? < 2 {
        return Ok(f64::INFINITY);
    }
    let pooled = z.mean((2, 3))?;
    let centered = pooled.broadcast_sub(&pooled.mean_keepdim(0)?)?;
    let std = centered.sqr()?.mean(0)?.sqrt()?;
    Ok(f64::from(std.mean_all()?.to_scalar::<f32>()?))
}

/// Trains `model` on same-category pairs drawn from `pool`.
pub fn train(
    model: &mut RegadModel,
    pool: &[SampleRecord],
    cfg: &TrainConfig,
    log_path: Option<&Path>,
) -> Result<TrainReport> {
    cfg.validate()?;
    let cats: Vec<&str> = pool.iter().map(|r| r.category.as_str()).collect();
    let sampler = PairSampler::new(&cats)?;
    log::info!(
        "training on {} images from {} categories",
        pool.len(),
        sampler.categories().len()
    );
    let cache = ImageCache::build(pool, model.config.side, model.config.normalization)?;
    let device = model.store.device().clone();

    let keep_backbone = !cfg.freeze_backbone;
    let trainable: Vec<_> = model
        .store
        .trainable(|n| keep_backbone || !n.starts_with(BACKBONE_PREFIX))
        .into_iter()
        .map(|(_, v)| v)
        .collect();
    let mut opt = MomentumSgd::new(trainable, cfg.momentum);

    let mut log = match log_path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| RegadError::io(dir, e))?;
            }
            let f = File::create(p).map_err(|e| RegadError::io(p, e))?;
            let mut w = BufWriter::new(f);
            writeln!(w, "epoch,step,loss,lr").map_err(|e| RegadError::io(p, e))?;
            Some((w, p.to_path_buf()))
        }
        None => None,
    };

    let steps_per_epoch = cfg.steps_per_epoch(pool.len());
    let total = cfg.epochs * steps_per_epoch;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = TrainReport::default();
    let mut global = 0usize;

    for epoch in 1..=cfg.epochs {
        let mut sum = 0.0;
        for step in 0..steps_per_epoch {
            let lr = cosine_lr(cfg.lr, global, total);
            let pairs: Vec<(usize, usize)> = (0..cfg.batch_size).map(|_| sampler.sample(&mut rng)).collect();
            let ia: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let ib: Vec<usize> = pairs.iter().map(|p| p.1).collect();

            let fa = model.net.forward(&cache.batch(&ia, &device)?, keep_backbone)?;
            let fb = model.net.forward(&cache.batch(&ib, &device)?, keep_backbone)?;
            let za = model.heads.encode(&fa.post[2], true)?;
            let zb = model.heads.encode(&fb.post[2], true)?;
            let pa = model.heads.predict(&za, true)?;
            let pb = model.heads.predict(&zb, true)?;
            let loss_t = registration_loss(&pa, &zb, &pb, &za)?;
            let loss = f64::from(loss_t.to_scalar::<f32>()?);

            if !loss.is_finite() {
                let batch = pairs
                    .iter()
                    .take(4)
                    .map(|&(a, b)| format!("({}, {})", pool[a].path.display(), pool[b].path.display()))
                    .collect::<Vec<_>>()
                    .join("; ");
                return Err(RegadError::NonFiniteLoss {
                    epoch,
                    step,
                    lr,
                    batch,
                });
            }

            let spread = channel_spread(&za.detach())?;
            log::debug!("epoch {epoch} step {step}: loss {loss:.6} lr {lr:.3e} z-spread {spread:.3e}");
            if spread < COLLAPSE_STD {
                report.collapse_warnings += 1;
                log::warn!("possible collapse at epoch {epoch} step {step}: z spread {spread:.3e}");
            }

            let grads = loss_t.backward()?;
            opt.step(&grads, lr)?;

            if let Some((w, p)) = log.as_mut() {
                writeln!(w, "{epoch},{step},{loss:.8},{lr:.8e}").map_err(|e| RegadError::io(p.as_path(), e))?;
            }
            report.steps.push(StepRecord { epoch, step, loss, lr });
            sum += loss;
            global += 1;
        }
        let mean = sum / steps_per_epoch as f64;
        log::info!("epoch {epoch}/{}: mean loss {mean:.6}", cfg.epochs);
        report.epoch_losses.push(mean);
    }
    if let Some((mut w, p)) = log {
        w.flush().map_err(|e| RegadError::io(p, e))?;
    }
    model.summary = TrainSummary {
        epochs: cfg.epochs,
        seed: cfg.seed,
        loss_final: report.epoch_losses.last().copied(),
    };
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::synth::{generate, SynthConfig};
    use crate::dataio::{load_dataset, DatasetKind, Split};
    use crate::featnet::{BackboneInit, StnMode};
    use crate::regtrain::ModelConfig;

    fn pool(dir: &Path) -> Vec<SampleRecord> {
        generate(
            dir,
            &SynthConfig {
                categories: 2,
                train_per_category: 3,
                test_per_category: 1,
                size: 32,
                seed: 2,
            },
        )
        .unwrap();
        load_dataset(dir, DatasetKind::Synthetic)
            .unwrap()
            .into_iter()
            .filter(|r| r.split == Split::Train)
            .collect()
    }

    fn model() -> RegadModel {
        RegadModel::new(&ModelConfig {
            side: 32,
            backbone: BackboneInit::Random,
            stn_mode: StnMode::RotationScale,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let dir = tempfile::tempdir().unwrap();
        let pool = pool(dir.path());
        let mut m = model();
        let before = m.store.snapshot().unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 2,
            lr: 0.0,
            ..Default::default()
        };
        let report = train(&mut m, &pool, &cfg, None).unwrap();
        assert_eq!(report.steps.len(), 3);
        let after = m.store.snapshot().unwrap();
        for (name, v) in &before {
            if !crate::featnet::params::is_buffer(name) {
                assert_eq!(v, &after[name], "{name} changed");
            }
        }
    }

    #[test]
    fn loss_stays_in_range_and_is_logged() {
        let dir = tempfile::tempdir().unwrap();
        let pool = pool(dir.path());
        let mut m = model();
        let log = dir.path().join("train.csv");
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 2,
            lr: 0.05,
            ..Default::default()
        };
        let report = train(&mut m, &pool, &cfg, Some(&log)).unwrap();
        assert_eq!(report.epoch_losses.len(), 2);
        assert!(report.steps.iter().all(|s| (-1.0..=1.0).contains(&s.loss)));
        let text = std::fs::read_to_string(&log).unwrap();
        assert!(text.starts_with("epoch,step,loss,lr\n"));
        assert_eq!(text.lines().count(), 1 + report.steps.len());
        assert_eq!(m.summary.epochs, 2);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            TrainConfig { epochs: 0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { lr: f64::NAN, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }
}
