use std::collections::BTreeSet;
use std::fs;
use std::path::{Component, Path, PathBuf};

use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ImageSample, Label, Split};
use crate::{RegadError, Result};

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "bmp"];
const GOOD: &str = "good";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Mvtec,
    Mpdd,
    Synthetic,
}

impl DatasetKind {
    fn expected_categories(self) -> Option<usize> {
        match self {
            DatasetKind::Mvtec => Some(15),
            DatasetKind::Mpdd => Some(6),
            DatasetKind::Synthetic => None,
        }
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = RegadError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mvtec" => Ok(DatasetKind::Mvtec),
            "mpdd" => Ok(DatasetKind::Mpdd),
            "synthetic" | "synth" => Ok(DatasetKind::Synthetic),
            other => Err(RegadError::Config(format!("unknown dataset kind `{other}`"))),
        }
    }
}

/// An indexed image on disk. Pixels are decoded on demand by [`SampleRecord::load`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRecord {
    pub path: PathBuf,
    pub category: String,
    pub split: Split,
    pub label: Label,
    pub defect_type: String,
    pub mask_path: Option<PathBuf>,
}

impl SampleRecord {
    /// Recovers `(category, split, label, defect_type)` from a path laid out
    /// as `<root>/<category>/<split>/<defect_type>/<file>`.
    pub fn from_path(root: &Path, path: &Path) -> Result<Self> {
        let rel = path.strip_prefix(root).map_err(|_| {
            RegadError::Layout(format!("{} is not under {}", path.display(), root.display()))
        })?;
        let parts: Vec<String> = rel
            .components()
            .filter_map(|c| match c {
                Component::Normal(s) => Some(s.to_string_lossy().into_owned()),
                _ => None,
            })
            .collect();
        if parts.len() != 4 {
            return Err(RegadError::Layout(format!(
                "{} does not match <category>/<split>/<type>/<file>",
                path.display()
            )));
        }
        let category = parts[0].clone();
        let defect_type = parts[2].clone();
        let split = match parts[1].as_str() {
            "train" => Split::Train,
            "test" => Split::Test,
            other => {
                return Err(RegadError::Layout(format!(
                    "{}: unknown split directory `{other}`",
                    path.display()
                )))
            }
        };
        let label = if defect_type == GOOD {
            Label::Normal
        } else {
            Label::Anomalous
        };
        if split == Split::Train && label == Label::Anomalous {
            return Err(RegadError::Layout(format!(
                "{}: training images must live under train/good",
                path.display()
            )));
        }
        let mask_path = (label == Label::Anomalous).then(|| {
            let stem = path.file_stem().unwrap_or_default().to_string_lossy();
            root.join(&category)
                .join("ground_truth")
                .join(&defect_type)
                .join(format!("{stem}_mask.png"))
        });
        Ok(SampleRecord {
            path: path.to_path_buf(),
            category,
            split,
            label,
            defect_type,
            mask_path,
        })
    }

    /// Decodes the image (converted to RGB) and, for anomalies, its mask.
    pub fn load(&self) -> Result<ImageSample> {
        let pixels = read_rgb(&self.path)?;
        let mask = match &self.mask_path {
            Some(mp) => {
                let m = read_mask(mp)?;
                if m.dim() != (pixels.dim().0, pixels.dim().1) {
                    return Err(RegadError::ShapeMismatch(format!(
                        "mask {} is {:?} but image {} is {:?}",
                        mp.display(),
                        m.dim(),
                        self.path.display(),
                        (pixels.dim().0, pixels.dim().1)
                    )));
                }
                Some(m)
            }
            None => None,
        };
        Ok(ImageSample {
            pixels,
            category: self.category.clone(),
            split: self.split,
            label: self.label,
            mask,
            source_path: self.path.clone(),
            standardized: false,
        })
    }
}

/// Decodes an image outside any dataset tree (labelled normal, no mask).
pub fn load_image(path: &Path) -> Result<ImageSample> {
    Ok(ImageSample {
        pixels: read_rgb(path)?,
        category: String::new(),
        split: Split::Test,
        label: Label::Normal,
        mask: None,
        source_path: path.to_path_buf(),
        standardized: false,
    })
}

fn read_rgb(path: &Path) -> Result<Array3<f32>> {
    let img = image::open(path).map_err(|e| RegadError::UnreadableImage {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    if w == 0 || h == 0 {
        return Err(RegadError::UnreadableImage {
            path: path.to_path_buf(),
            reason: "zero-area image".into(),
        });
    }
    let raw = rgb.into_raw();
    let pixels = Array3::from_shape_vec((h as usize, w as usize, 3), raw)
        .expect("rgb buffer has h*w*3 bytes")
        .mapv(|v| f32::from(v) / 255.0);
    Ok(pixels)
}

fn read_mask(path: &Path) -> Result<Array2<u8>> {
    let img = image::open(path).map_err(|e| RegadError::UnreadableImage {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let luma = img.to_luma8();
    let (w, h) = luma.dimensions();
    let raw = luma.into_raw();
    Ok(Array2::from_shape_vec((h as usize, w as usize), raw)
        .expect("luma buffer has h*w bytes")
        .mapv(|v| u8::from(v != 0)))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| RegadError::io(dir, e))? {
        let entry = entry.map_err(|e| RegadError::io(dir, e))?;
        out.push(entry.path());
    }
    out.sort();
    Ok(out)
}

fn is_image(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .map(|e| IMAGE_EXTENSIONS.contains(&e.to_string_lossy().to_ascii_lowercase().as_str()))
            .unwrap_or(false)
}

/// Scans an MVTec/MPDD-style directory tree. Records are returned in
/// lexicographic path order; pixels are not decoded here.
pub fn load_dataset(root: &Path, kind: DatasetKind) -> Result<Vec<SampleRecord>> {
    if !root.is_dir() {
        return Err(RegadError::Layout(format!(
            "dataset root {} is not a directory",
            root.display()
        )));
    }
    let mut records = Vec::new();
    let mut n_categories = 0;
    for cat_dir in sorted_entries(root)? {
        if !cat_dir.is_dir() || !cat_dir.join("train").is_dir() {
            continue;
        }
        let category = cat_dir
            .file_name()
            .unwrap_or_default()
            .to_string_lossy()
            .into_owned();
        n_categories += 1;

        let mut n_train = 0;
        let good = cat_dir.join("train").join(GOOD);
        if good.is_dir() {
            for p in sorted_entries(&good)?.into_iter().filter(|p| is_image(p)) {
                records.push(SampleRecord::from_path(root, &p)?);
                n_train += 1;
            }
        }
        let mut n_test = 0;
        let test = cat_dir.join("test");
        if test.is_dir() {
            for type_dir in sorted_entries(&test)?.into_iter().filter(|p| p.is_dir()) {
                for p in sorted_entries(&type_dir)?.into_iter().filter(|p| is_image(p)) {
                    let rec = SampleRecord::from_path(root, &p)?;
                    if let Some(mp) = &rec.mask_path {
                        if !mp.is_file() {
                            return Err(RegadError::MissingMask {
                                image: p.clone(),
                                expected: mp.clone(),
                            });
                        }
                    }
                    records.push(rec);
                    n_test += 1;
                }
            }
        }
        if n_train == 0 || n_test == 0 {
            return Err(RegadError::EmptyCategory {
                category,
                detail: format!("{n_train} training and {n_test} test images"),
            });
        }
    }
    if n_categories == 0 {
        return Err(RegadError::Layout(format!(
            "no categories found under {}",
            root.display()
        )));
    }
    if let Some(expected) = kind.expected_categories() {
        if expected != n_categories {
            log::warn!(
                "{:?} root {} has {n_categories} categories (expected {expected})",
                kind,
                root.display()
            );
        }
    }
    Ok(records)
}

/// Distinct categories in first-seen (lexicographic) order.
pub fn categories(records: &[SampleRecord]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    records
        .iter()
        .filter(|r| seen.insert(r.category.clone()))
        .map(|r| r.category.clone())
        .collect()
}

#[derive(Debug, Clone)]
pub struct LooSplit {
    pub target: String,
    /// Normal training images of every other category.
    pub train_pool: Vec<SampleRecord>,
    /// All test images of the target category.
    pub test_pool: Vec<SampleRecord>,
    pub warning: Option<String>,
}

pub fn make_loo_split(records: &[SampleRecord], target: &str) -> Result<LooSplit> {
    if !records.iter().any(|r| r.category == target) {
        return Err(RegadError::UnknownCategory(target.to_string()));
    }
    let train_pool: Vec<SampleRecord> = records
        .iter()
        .filter(|r| r.category != target && r.split == Split::Train && r.label == Label::Normal)
        .cloned()
        .collect();
    let test_pool: Vec<SampleRecord> = records
        .iter()
        .filter(|r| r.category == target && r.split == Split::Test)
        .cloned()
        .collect();
    let warning = train_pool.is_empty().then(|| {
        let msg = format!("leave-one-out split for `{target}` has an empty training pool");
        log::warn!("{msg}");
        msg
    });
    Ok(LooSplit {
        target: target.to_string(),
        train_pool,
        test_pool,
        warning,
    })
}

/// `k` normal training images of one category.
#[derive(Debug, Clone)]
pub struct SupportSet {
    pub category: String,
    pub k: usize,
    pub seed: u64,
    pub records: Vec<SampleRecord>,
}

impl SupportSet {
    pub fn load(&self) -> Result<Vec<ImageSample>> {
        self.records.iter().map(SampleRecord::load).collect()
    }
}

/// Draws `k` distinct normal training images of `category` uniformly at random.
pub fn sample_support(
    records: &[SampleRecord],
    category: &str,
    k: usize,
    seed: u64,
) -> Result<SupportSet> {
    if k == 0 {
        return Err(RegadError::InvalidInput("k must be positive".into()));
    }
    let candidates: Vec<&SampleRecord> = records
        .iter()
        .filter(|r| r.category == category && r.split == Split::Train && r.label == Label::Normal)
        .collect();
    if candidates.len() < k {
        return Err(RegadError::InsufficientSamples {
            needed: k,
            available: candidates.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, candidates.len(), k).into_vec();
    picked.sort_unstable();
    Ok(SupportSet {
        category: category.to_string(),
        k,
        seed,
        records: picked.into_iter().map(|i| candidates[i].clone()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(cat: &str, split: Split, ty: &str, n: usize) -> SampleRecord {
        let root = Path::new("/data");
        let split_dir = match split {
            Split::Train => "train",
            Split::Test => "test",
        };
        SampleRecord::from_path(
            root,
            &root.join(cat).join(split_dir).join(ty).join(format!("{n:03}.png")),
        )
        .unwrap()
    }

    fn toy() -> Vec<SampleRecord> {
        let mut v = Vec::new();
        for cat in ["a", "b", "c"] {
            for n in 0..5 {
                v.push(rec(cat, Split::Train, "good", n));
            }
            v.push(rec(cat, Split::Test, "good", 0));
            v.push(rec(cat, Split::Test, "crack", 1));
        }
        v
    }

    #[test]
    fn path_round_trip() {
        let r = rec("bottle", Split::Test, "broken_large", 7);
        assert_eq!(r.category, "bottle");
        assert_eq!(r.split, Split::Test);
        assert_eq!(r.label, Label::Anomalous);
        assert_eq!(
            r.mask_path.unwrap(),
            Path::new("/data/bottle/ground_truth/broken_large/007_mask.png")
        );
        let g = rec("bottle", Split::Test, "good", 1);
        assert_eq!(g.label, Label::Normal);
        assert!(g.mask_path.is_none());
    }

    #[test]
    fn anomalous_training_path_is_rejected() {
        let root = Path::new("/data");
        assert!(SampleRecord::from_path(root, &root.join("a/train/crack/0.png")).is_err());
    }

    #[test]
    fn loo_split_excludes_target() {
        let split = make_loo_split(&toy(), "b").unwrap();
        assert_eq!(split.train_pool.len(), 10);
        assert!(split.train_pool.iter().all(|r| r.category != "b"));
        assert_eq!(split.test_pool.len(), 2);
        assert!(split.warning.is_none());
        assert_eq!(categories(&split.train_pool), vec!["a", "c"]);
    }

    #[test]
    fn loo_split_unknown_target() {
        assert!(matches!(
            make_loo_split(&toy(), "nonexistent"),
            Err(RegadError::UnknownCategory(_))
        ));
    }

    #[test]
    fn loo_split_single_category_warns() {
        let only_a: Vec<_> = toy().into_iter().filter(|r| r.category == "a").collect();
        let split = make_loo_split(&only_a, "a").unwrap();
        assert!(split.train_pool.is_empty());
        assert!(split.warning.is_some());
    }

    #[test]
    fn support_is_deterministic_and_distinct() {
        let recs = toy();
        let s1 = sample_support(&recs, "a", 2, 0).unwrap();
        let s2 = sample_support(&recs, "a", 2, 0).unwrap();
        assert_eq!(s1.records, s2.records);
        assert_ne!(s1.records[0], s1.records[1]);
        assert!(s1.records.iter().all(|r| r.category == "a" && r.label == Label::Normal));
    }

    #[test]
    fn support_needs_enough_candidates() {
        let err = sample_support(&toy(), "a", 8, 0).unwrap_err();
        assert!(matches!(
            err,
            RegadError::InsufficientSamples {
                needed: 8,
                available: 5
            }
        ));
    }

    #[test]
    fn ten_seeds_give_ten_supports() {
        let recs = toy();
        let supports: Vec<_> = (0..10).map(|s| sample_support(&recs, "c", 2, s).unwrap()).collect();
        assert_eq!(supports.len(), 10);
        // C(5,2) = 10 possible supports, so several seeds must differ.
        let distinct: BTreeSet<Vec<PathBuf>> = supports
            .iter()
            .map(|s| s.records.iter().map(|r| r.path.clone()).collect())
            .collect();
        assert!(distinct.len() > 1);
    }
}
