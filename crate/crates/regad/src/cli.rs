//! Command-line front end: `regad synth|train|estimate|score|eval|bench`.
//!
//! Settings resolve as defaults, then `--config FILE`, then flags. Every run
//! writes `resolved_config.txt` and `manifest.txt` into its output directory.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::config::{BackboneSource, RunConfig};
use crate::dataio::synth::{self, SynthConfig};
use crate::dataio::{
    load_dataset, load_image, make_loo_split, sample_support, AugmentationConfig, DatasetKind,
    SampleRecord, Split,
};
use crate::evalkit::{run_benchmark, write_reports, EvalOutputs, ModelSource, PixelAucMode};
use crate::featnet::{StnChaining, StnMode};
use crate::normest::{estimate, read_stats, write_stats, EstSource, FittedStats};
use crate::regtrain::{checkpoint_hash, train, RegadModel, META_FILE, MODEL_FILE};
use crate::scoring::{save_heatmap, score_image};
use crate::{RegadError, Result};

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.txt";
pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Parser)]
#[command(name = "regad", version, about = "Few-shot anomaly detection by feature registration")]
pub struct Cli {
    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic MVTec-layout dataset.
    Synth(SynthArgs),
    /// Train the registration network.
    Train(TrainArgs),
    /// Fit a category's Gaussian grid from k support images.
    Estimate(EstimateArgs),
    /// Score one image against a fitted grid.
    Score(ScoreArgs),
    /// Evaluate a checkpoint on one or more categories.
    Eval(EvalArgs),
    /// Leave-one-out benchmark: train per target category, then evaluate.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads. Outputs are deterministic only with 1.
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
}

#[derive(Debug, Args)]
struct DataArgs {
    #[arg(long, value_name = "DIR")]
    data_root: PathBuf,
    /// Dataset layout: mvtec, mpdd or synthetic.
    #[arg(long)]
    kind: Option<DatasetKind>,
    /// Input side length after resizing.
    #[arg(long)]
    side: Option<usize>,
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// STN family: none, translation, rotation, scale, shear, rotation_scale, ...
    #[arg(long)]
    stn_mode: Option<StnMode>,
    /// Feed each stage the warped (post) or unwarped (pre) features.
    #[arg(long)]
    stn_chaining: Option<StnChaining>,
    /// Backbone initialisation: pretrained or random.
    #[arg(long, value_parser = parse_backbone)]
    backbone: Option<BackboneSource>,
    /// Pretrained weights file (default `$REGAD_CACHE/resnet18.safetensors`).
    #[arg(long, value_name = "FILE")]
    backbone_path: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainOpts {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long, action = ArgAction::SetTrue)]
    freeze_backbone: bool,
}

#[derive(Debug, Args)]
struct EstimateOpts {
    /// Diagonal regulariser added to every covariance.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Features to model: stn or encoder.
    #[arg(long)]
    est_source: Option<EstSource>,
    /// Keep a seeded random subset of this many channels.
    #[arg(long, value_name = "D")]
    reduce_dims: Option<usize>,
    /// Use the raw support images only.
    #[arg(long, action = ArgAction::SetTrue)]
    no_augment: bool,
}

#[derive(Debug, Args)]
struct EvalOpts {
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
    /// Restrict to these categories (repeatable).
    #[arg(long = "category", value_name = "NAME")]
    categories: Vec<String>,
    /// pooled or per_image.
    #[arg(long, value_parser = parse_pixel_auc)]
    pixel_auc: Option<PixelAucMode>,
    #[arg(long)]
    smooth_sigma: Option<f64>,
    /// Write `NA` instead of wall-clock timings.
    #[arg(long, action = ArgAction::SetTrue)]
    no_timing: bool,
    /// Write per-image heatmaps under this directory.
    #[arg(long, value_name = "DIR")]
    dump_heatmaps: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    categories: usize,
    #[arg(long, default_value_t = 10)]
    train_per_cat: usize,
    #[arg(long, default_value_t = 10)]
    test_per_cat: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Image side in pixels.
    #[arg(long, default_value_t = 128)]
    size: usize,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    train: TrainOpts,
    /// Hold out this category; without it every category is used.
    #[arg(long)]
    target: Option<String>,
    /// Checkpoint directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_name = "DIR")]
    ckpt: PathBuf,
    #[arg(long, value_name = "DIR")]
    data_root: PathBuf,
    #[arg(long)]
    kind: Option<DatasetKind>,
    #[arg(long)]
    category: String,
    #[arg(long)]
    k: Option<usize>,
    #[command(flatten)]
    est: EstimateOpts,
    /// Output stats archive.
    #[arg(long, value_name = "FILE", default_value = "stats.regad")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_name = "DIR")]
    ckpt: PathBuf,
    #[arg(long, value_name = "FILE")]
    stats: PathBuf,
    #[arg(long, value_name = "PATH")]
    image: PathBuf,
    #[arg(long, value_name = "PNG")]
    out_heatmap: Option<PathBuf>,
    /// Score destination; `-` prints to stdout.
    #[arg(long, value_name = "FILE", default_value = "-")]
    out_score: String,
    #[arg(long)]
    smooth_sigma: Option<f64>,
    /// Where to write the run record (default: the heatmap's directory,
    /// else the stats file's directory).
    #[arg(long, value_name = "DIR")]
    run_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    est: EstimateOpts,
    #[command(flatten)]
    eval: EvalOpts,
    #[arg(long, value_name = "DIR")]
    ckpt: PathBuf,
    /// Report directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    train: TrainOpts,
    #[command(flatten)]
    est: EstimateOpts,
    #[command(flatten)]
    eval: EvalOpts,
    /// Reuse this checkpoint for every target instead of training.
    #[arg(long, value_name = "DIR")]
    ckpt: Option<PathBuf>,
    /// Report directory; per-target checkpoints go to `<out>/ckpt/<category>`.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

fn parse_backbone(s: &str) -> std::result::Result<BackboneSource, String> {
    match s {
        "pretrained" => Ok(BackboneSource::Pretrained),
        "random" => Ok(BackboneSource::Random),
        other => Err(format!("expected `pretrained` or `random`, got `{other}`")),
    }
}

fn parse_pixel_auc(s: &str) -> std::result::Result<PixelAucMode, String> {
    match s {
        "pooled" => Ok(PixelAucMode::Pooled),
        "per_image" | "per-image" => Ok(PixelAucMode::PerImage),
        other => Err(format!("expected `pooled` or `per_image`, got `{other}`")),
    }
}

impl CommonArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
            cfg.train.seed = s;
        }
        if let Some(j) = self.jobs {
            cfg.jobs = j;
        }
        Ok(cfg)
    }
}

impl DataArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(k) = self.kind {
            cfg.data.kind = k;
        }
        if let Some(s) = self.side {
            cfg.data.side = s;
        }
    }
}

impl ModelArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(m) = self.stn_mode {
            cfg.model.stn_mode = m;
        }
        if let Some(c) = self.stn_chaining {
            cfg.model.stn_chaining = c;
        }
        if let Some(b) = self.backbone {
            cfg.model.backbone = b;
        }
        if let Some(p) = &self.backbone_path {
            cfg.model.backbone_path = Some(p.clone());
        }
    }
}

impl TrainOpts {
    fn apply(&self, cfg: &mut RunConfig) {
        let t = &mut cfg.train;
        if let Some(v) = self.epochs {
            t.epochs = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = self.lr {
            t.lr = v;
        }
        if let Some(v) = self.momentum {
            t.momentum = v;
        }
        if self.freeze_backbone {
            t.freeze_backbone = true;
        }
    }
}

impl EstimateOpts {
    fn apply(&self, cfg: &mut RunConfig) {
        let e = &mut cfg.estimate;
        if let Some(v) = self.epsilon {
            e.epsilon = v;
        }
        if let Some(v) = self.est_source {
            e.est_source = v;
        }
        if let Some(v) = self.reduce_dims {
            e.reduce_dims = Some(v);
        }
        if self.no_augment {
            cfg.augment = AugmentationConfig::disabled();
        }
    }
}

impl EvalOpts {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = self.k {
            cfg.eval.k = v;
        }
        if let Some(v) = self.runs {
            cfg.eval.runs = v;
        }
        if !self.categories.is_empty() {
            cfg.eval.categories = self.categories.clone();
        }
        if let Some(v) = self.pixel_auc {
            cfg.eval.pixel_auc = v;
        }
        if let Some(v) = self.smooth_sigma {
            cfg.score.smooth_sigma = v;
        }
        if self.no_timing {
            cfg.eval.record_timing = false;
        }
    }
}

/// Collects the artifacts of one run and writes its record.
struct RunRecord {
    dir: PathBuf,
    artifacts: Vec<PathBuf>,
}

impl RunRecord {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| RegadError::io(dir, e))?;
        Ok(RunRecord {
            dir: dir.to_path_buf(),
            artifacts: Vec::new(),
        })
    }

    fn add(&mut self, path: impl Into<PathBuf>) {
        self.artifacts.push(path.into());
    }

    fn add_tree(&mut self, root: &Path) -> Result<()> {
        let mut stack = vec![root.to_path_buf()];
        let mut files = Vec::new();
        while let Some(d) = stack.pop() {
            for entry in fs::read_dir(&d).map_err(|e| RegadError::io(&d, e))? {
                let p = entry.map_err(|e| RegadError::io(&d, e))?.path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    files.push(p);
                }
            }
        }
        files.sort();
        self.artifacts.extend(files);
        Ok(())
    }

    /// Writes `resolved_config.txt` and `manifest.txt` (`sha256  bytes  path`).
    fn finish(mut self, resolved: &str) -> Result<()> {
        let cfg_path = self.dir.join(RESOLVED_CONFIG_FILE);
        fs::write(&cfg_path, resolved).map_err(|e| RegadError::io(&cfg_path, e))?;
        self.artifacts.push(cfg_path);
        let mut text = String::new();
        for p in &self.artifacts {
            let bytes = fs::read(p).map_err(|e| RegadError::io(p, e))?;
            let shown = p.strip_prefix(&self.dir).unwrap_or(p);
            text.push_str(&format!(
                "{}  {}  {}\n",
                hex::encode(Sha256::digest(&bytes)),
                bytes.len(),
                shown.display()
            ));
        }
        let manifest = self.dir.join(MANIFEST_FILE);
        fs::write(&manifest, text).map_err(|e| RegadError::io(&manifest, e))
    }
}

fn init_threads(jobs: usize) -> Result<()> {
    if jobs == 0 {
        return Err(RegadError::Config("--jobs must be at least 1".into()));
    }
    // A second initialisation in the same process keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    Ok(())
}

fn load_records(root: &Path, kind: DatasetKind) -> Result<Vec<SampleRecord>> {
    let records = load_dataset(root, kind)?;
    log::info!("indexed {} images under {}", records.len(), root.display());
    Ok(records)
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn run_synth(a: &SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        categories: a.categories,
        train_per_category: a.train_per_cat,
        test_per_category: a.test_per_cat,
        size: a.size,
        seed: a.seed,
    };
    let mut record = RunRecord::new(&a.out)?;
    for p in synth::generate(&a.out, &cfg)? {
        record.add(p);
    }
    log::info!("wrote {} categories to {}", cfg.categories, a.out.display());
    let text = toml::to_string(&cfg).map_err(|e| RegadError::Config(e.to_string()))?;
    record.finish(&text)
}

fn run_train(a: &TrainArgs) -> Result<()> {
    let mut cfg = a.common.resolve()?;
    a.data.apply(&mut cfg);
    a.model.apply(&mut cfg);
    a.train.apply(&mut cfg);
    cfg.validate()?;
    init_threads(cfg.jobs)?;

    let records = load_records(&a.data.data_root, cfg.data.kind)?;
    let pool: Vec<SampleRecord> = match &a.target {
        Some(t) => make_loo_split(&records, t)?.train_pool,
        None => records.into_iter().filter(|r| r.split == Split::Train).collect(),
    };
    let mut record = RunRecord::new(&a.out)?;
    let mut model = RegadModel::new(&cfg.model_config())?;
    let log_path = a.out.join("train_log.csv");
    let report = train(&mut model, &pool, &cfg.train, Some(&log_path))?;
    model.save(&a.out)?;
    if let Some(last) = report.epoch_losses.last() {
        log::info!("final epoch loss {last:.6}");
    }
    record.add(a.out.join(MODEL_FILE));
    record.add(a.out.join(META_FILE));
    record.add(log_path);
    record.finish(&cfg.to_toml()?)
}

/// Loads a checkpoint and mirrors its architecture into `cfg`.
fn load_checkpoint(dir: &Path, cfg: &mut RunConfig) -> Result<(RegadModel, String)> {
    let model = RegadModel::load(dir)?;
    let hash = checkpoint_hash(dir)?;
    cfg.data.side = model.config.side;
    cfg.data.normalization = model.config.normalization;
    cfg.model.stn_mode = model.config.stn_mode;
    cfg.model.stn_chaining = model.config.chaining;
    Ok((model, hash))
}

fn run_estimate(a: &EstimateArgs) -> Result<()> {
    let mut cfg = a.common.resolve()?;
    if let Some(k) = a.kind {
        cfg.data.kind = k;
    }
    if let Some(k) = a.k {
        cfg.eval.k = k;
    }
    cfg.eval.categories = vec![a.category.clone()];
    a.est.apply(&mut cfg);
    cfg.validate()?;
    init_threads(cfg.jobs)?;

    let (model, hash) = load_checkpoint(&a.ckpt, &mut cfg)?;
    let records = load_records(&a.data_root, cfg.data.kind)?;
    let support = sample_support(&records, &a.category, cfg.eval.k, cfg.seed)?;
    let stats = estimate(&model, &hash, &support, &cfg.augment, &cfg.estimate)?;
    let mut record = RunRecord::new(&parent_dir(&a.out))?;
    write_stats(&a.out, &stats.grid, &stats.meta)?;
    record.add(&a.out);
    record.finish(&cfg.to_toml()?)
}

fn run_score(a: &ScoreArgs) -> Result<()> {
    let mut cfg = a.common.resolve()?;
    if let Some(s) = a.smooth_sigma {
        cfg.score.smooth_sigma = s;
    }
    cfg.validate()?;
    init_threads(cfg.jobs)?;

    let (model, _) = load_checkpoint(&a.ckpt, &mut cfg)?;
    let (grid, meta) = read_stats(&a.stats)?;
    cfg.estimate.est_source = meta.est_source;
    let stats = FittedStats { grid, meta };
    let image = load_image(&a.image)?;
    let map = score_image(&model, &stats, &image, &cfg.score)?;

    let run_dir = match (&a.run_dir, &a.out_heatmap) {
        (Some(d), _) => d.clone(),
        (None, Some(h)) => parent_dir(h),
        (None, None) => parent_dir(&a.stats),
    };
    let mut record = RunRecord::new(&run_dir)?;
    if let Some(h) = &a.out_heatmap {
        save_heatmap(&map.image_scores, h)?;
        record.add(h);
    }
    let line = format!("{}\n", map.image_score);
    if a.out_score == "-" {
        let mut out = std::io::stdout().lock();
        out.write_all(line.as_bytes())
            .and_then(|_| out.flush())
            .map_err(|e| RegadError::io("<stdout>", e))?;
    } else {
        let p = PathBuf::from(&a.out_score);
        fs::write(&p, line).map_err(|e| RegadError::io(&p, e))?;
        record.add(p);
    }
    record.finish(&cfg.to_toml()?)
}

fn finish_reports(
    out: &Path,
    cfg: &RunConfig,
    reports: &[crate::evalkit::EvalReport],
    heatmaps: Option<&Path>,
    mut record: RunRecord,
) -> Result<()> {
    for p in write_reports(out, reports, cfg.eval.record_timing)? {
        record.add(p);
    }
    if let Some(h) = heatmaps {
        if h.exists() {
            record.add_tree(h)?;
        }
    }
    for r in reports {
        log::info!(
            "{}: image AUC {:.4} ± {:.4}",
            r.category,
            r.mean_image_auc,
            r.std_image_auc
        );
    }
    record.finish(&cfg.to_toml()?)
}

fn run_eval(a: &EvalArgs) -> Result<()> {
    let mut cfg = a.common.resolve()?;
    a.data.apply(&mut cfg);
    a.est.apply(&mut cfg);
    a.eval.apply(&mut cfg);
    cfg.validate()?;
    init_threads(cfg.jobs)?;

    // Mirror the checkpoint's architecture into the echoed config.
    load_checkpoint(&a.ckpt, &mut cfg)?;
    let records = load_records(&a.data.data_root, cfg.data.kind)?;
    let record = RunRecord::new(&a.out)?;
    let outputs = EvalOutputs {
        stats_dir: None,
        heatmap_dir: a.eval.dump_heatmaps.clone(),
    };
    let reports = run_benchmark(&records, &cfg, ModelSource::Shared(&a.ckpt), &outputs)?;
    finish_reports(&a.out, &cfg, &reports, a.eval.dump_heatmaps.as_deref(), record)
}

fn run_bench(a: &BenchArgs) -> Result<()> {
    let mut cfg = a.common.resolve()?;
    a.data.apply(&mut cfg);
    a.model.apply(&mut cfg);
    a.train.apply(&mut cfg);
    a.est.apply(&mut cfg);
    a.eval.apply(&mut cfg);
    cfg.validate()?;
    init_threads(cfg.jobs)?;

    if let Some(ckpt) = &a.ckpt {
        load_checkpoint(ckpt, &mut cfg)?;
    }
    let records = load_records(&a.data.data_root, cfg.data.kind)?;
    let mut record = RunRecord::new(&a.out)?;
    let ckpt_root = a.out.join("ckpt");
    let source = match &a.ckpt {
        Some(dir) => ModelSource::Shared(dir),
        None => ModelSource::TrainPerTarget(&ckpt_root),
    };
    let outputs = EvalOutputs {
        stats_dir: None,
        heatmap_dir: a.eval.dump_heatmaps.clone(),
    };
    let reports = run_benchmark(&records, &cfg, source, &outputs)?;
    if a.ckpt.is_none() {
        record.add_tree(&ckpt_root)?;
    }
    finish_reports(&a.out, &cfg, &reports, a.eval.dump_heatmaps.as_deref(), record)
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => run_synth(a),
        Command::Train(a) => run_train(a),
        Command::Estimate(a) => run_estimate(a),
        Command::Score(a) => run_score(a),
        Command::Eval(a) => run_eval(a),
        Command::Bench(a) => run_bench(a),
    }
}

/// Parses `args` and runs the command. Usage errors exit 2, `--help` exits 0,
/// a failed run prints `error[<class>]: <message>` on one line and exits 1.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(2));
        }
    };
    let level = if cli.quiet { "warn" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.class());
            ExitCode::from(1)
        }
    }
}
