//! Leave-one-out k-shot protocol: per target category, a model trained on
//! the other categories (or a shared checkpoint), `runs` support draws, and
//! image/pixel AUROC over the target's test set.

use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::auroc::{auroc, pixel_auroc};
use super::report::{EvalReport, RunResult};
use crate::config::RunConfig;
use crate::dataio::{categories, make_loo_split, resize, sample_support, ImageSample, Label, SampleRecord};
use crate::normest::{estimate, write_stats};
use crate::regtrain::{checkpoint_hash, train, RegadModel};
use crate::scoring::{save_heatmap, score_images};
use crate::{RegadError, Result};

/// Test images of one category, resized to the model side, with masks
/// (all-zero for normal images).
pub struct TestSet {
    pub images: Vec<ImageSample>,
    pub masks: Vec<Array2<u8>>,
    pub labels: Vec<bool>,
}

impl TestSet {
    pub fn load(records: &[SampleRecord], side: usize) -> Result<Self> {
        let mut images = Vec::with_capacity(records.len());
        let mut masks = Vec::with_capacity(records.len());
        let mut labels = Vec::with_capacity(records.len());
        for r in records {
            let img = resize(&r.load()?, side)?;
            masks.push(img.mask.clone().unwrap_or_else(|| Array2::zeros((side, side))));
            labels.push(img.label == Label::Anomalous);
            images.push(img);
        }
        Ok(TestSet { images, masks, labels })
    }
}

/// Optional side outputs of an evaluation.
#[derive(Debug, Clone, Default)]
pub struct EvalOutputs {
    /// Write each run's stats archive here as `<category>_k<k>_seed<seed>.regad`.
    pub stats_dir: Option<PathBuf>,
    /// Write per-image heatmaps under `<dir>/<category>/seed<seed>/`.
    pub heatmap_dir: Option<PathBuf>,
}

/// All runs for one category against a fixed model.
pub fn evaluate_category(
    model: &RegadModel,
    ckpt_hash: &str,
    records: &[SampleRecord],
    category: &str,
    cfg: &RunConfig,
    outputs: &EvalOutputs,
) -> Result<EvalReport> {
    let split = make_loo_split(records, category)?;
    let test = TestSet::load(&split.test_pool, model.config.side)?;
    let k = cfg.eval.k;
    let mut runs = Vec::with_capacity(cfg.eval.runs);
    for r in 0..cfg.eval.runs {
        let seed = cfg.run_seed(r);
        let support = sample_support(records, category, k, seed)?;
        let stats = estimate(model, ckpt_hash, &support, &cfg.augment, &cfg.estimate)?;
        if let Some(dir) = &outputs.stats_dir {
            write_stats(&dir.join(format!("{category}_k{k}_seed{seed}.regad")), &stats.grid, &stats.meta)?;
        }
        let refs: Vec<&ImageSample> = test.images.iter().collect();
        let maps = score_images(model, &stats, &refs, &cfg.score)?;

        let scores: Vec<f64> = maps.iter().map(|m| m.image_score).collect();
        let image_auc = auroc(&scores, &test.labels)?;
        let map_refs: Vec<&Array2<f64>> = maps.iter().map(|m| &m.image_scores).collect();
        let mask_refs: Vec<&Array2<u8>> = test.masks.iter().collect();
        let pixel_auc = match pixel_auroc(&map_refs, &mask_refs, cfg.eval.pixel_auc) {
            Ok(v) => Some(v),
            Err(RegadError::SingleClass { .. }) => None,
            Err(e) => return Err(e),
        };
        if let Some(dir) = &outputs.heatmap_dir {
            let run_dir = dir.join(category).join(format!("seed{seed}"));
            for (img, m) in test.images.iter().zip(&maps) {
                save_heatmap(&m.image_scores, &run_dir.join(heatmap_name(&img.source_path)))?;
            }
        }
        let adapt_seconds = stats.meta.adaptation_seconds.unwrap_or(f64::NAN);
        log::info!(
            "{category} k={k} seed={seed}: image AUC {image_auc:.4}, pixel AUC {}, adaptation {adapt_seconds:.2}s",
            pixel_auc.map_or_else(|| "NA".into(), |v| format!("{v:.4}"))
        );
        runs.push(RunResult {
            seed,
            image_auc,
            pixel_auc,
            adapt_seconds,
        });
    }
    Ok(EvalReport::new(category, k, runs))
}

/// `<defect_type>_<stem>.png`.
fn heatmap_name(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy()).unwrap_or_default();
    let defect = path
        .parent()
        .and_then(Path::file_name)
        .map(|s| s.to_string_lossy())
        .unwrap_or_default();
    format!("{defect}_{stem}.png")
}

/// Categories to evaluate: the configured list, or everything discovered.
pub fn target_categories(records: &[SampleRecord], cfg: &RunConfig) -> Result<Vec<String>> {
    let all = categories(records);
    if cfg.eval.categories.is_empty() {
        return Ok(all);
    }
    for c in &cfg.eval.categories {
        if !all.contains(c) {
            return Err(RegadError::UnknownCategory(c.clone()));
        }
    }
    Ok(cfg.eval.categories.clone())
}

/// How the benchmark obtains a model for each target.
pub enum ModelSource<'a> {
    /// One checkpoint reused for every target.
    Shared(&'a Path),
    /// Train one model per target on the other categories, under this directory.
    TrainPerTarget(&'a Path),
}

/// The full leave-one-out benchmark.
pub fn run_benchmark(
    records: &[SampleRecord],
    cfg: &RunConfig,
    source: ModelSource<'_>,
    outputs: &EvalOutputs,
) -> Result<Vec<EvalReport>> {
    let targets = target_categories(records, cfg)?;
    let shared = match source {
        ModelSource::Shared(dir) => Some((RegadModel::load(dir)?, checkpoint_hash(dir)?)),
        ModelSource::TrainPerTarget(_) => None,
    };
    let mut reports = Vec::with_capacity(targets.len());
    for target in &targets {
        let report = match (&shared, &source) {
            (Some((model, hash)), _) => evaluate_category(model, hash, records, target, cfg, outputs)?,
            (None, ModelSource::TrainPerTarget(root)) => {
                let dir = root.join(target);
                let split = make_loo_split(records, target)?;
                let mut model = RegadModel::new(&cfg.model_config())?;
                log::info!("training leave-one-out model for `{target}`");
                train(&mut model, &split.train_pool, &cfg.train, Some(&dir.join("train_log.csv")))?;
                model.save(&dir)?;
                let hash = checkpoint_hash(&dir)?;
                evaluate_category(&model, &hash, records, target, cfg, outputs)?
            }
            (None, ModelSource::Shared(_)) => unreachable!("shared model is loaded above"),
        };
        reports.push(report);
    }
    Ok(reports)
}
