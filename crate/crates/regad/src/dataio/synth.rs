//! Procedural stand-in for MVTec: one texture family per category, defects
//! are blobs or scratches of contrasting intensity with exact masks.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::{RegadError, Result};

#[derive(Debug, Clone, Serialize)]
pub struct SynthConfig {
    pub categories: usize,
    pub train_per_category: usize,
    pub test_per_category: usize,
    pub size: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            categories: 3,
            train_per_category: 10,
            test_per_category: 10,
            size: 128,
            seed: 0,
        }
    }
}

struct Texture {
    base: [f64; 3],
    tint: [f64; 3],
    waves: Vec<(f64, f64, f64)>, // (frequency, orientation, amplitude)
    noise: f64,
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let base = [
            rng.random_range(0.25..0.6),
            rng.random_range(0.25..0.6),
            rng.random_range(0.25..0.6),
        ];
        let tint = [
            rng.random_range(0.3..1.0),
            rng.random_range(0.3..1.0),
            rng.random_range(0.3..1.0),
        ];
        let waves = (0..rng.random_range(2..4))
            .map(|_| {
                (
                    rng.random_range(2.0..9.0),
                    rng.random_range(0.0..std::f64::consts::PI),
                    rng.random_range(0.05..0.15),
                )
            })
            .collect();
        Texture {
            base,
            tint,
            waves,
            noise: rng.random_range(0.01..0.03),
        }
    }

    fn render(&self, size: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
        let phases: Vec<f64> = self
            .waves
            .iter()
            .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
            .collect();
        let mut out = Vec::with_capacity(size * size);
        for y in 0..size {
            for x in 0..size {
                let (u, v) = (x as f64 / size as f64, y as f64 / size as f64);
                let mut t = 0.0;
                for ((freq, angle, amp), phase) in self.waves.iter().zip(&phases) {
                    let proj = u * angle.cos() + v * angle.sin();
                    t += amp * (std::f64::consts::TAU * freq * proj + phase).sin();
                }
                let mut px = [0.0; 3];
                for c in 0..3 {
                    let n = self.noise * (rng.random::<f64>() - 0.5) * 2.0;
                    px[c] = (self.base[c] + t * self.tint[c] + n).clamp(0.0, 1.0);
                }
                out.push(px);
            }
        }
        out
    }
}

#[derive(Clone, Copy)]
enum Defect {
    Blob,
    Scratch,
}

impl Defect {
    fn name(self) -> &'static str {
        match self {
            Defect::Blob => "blob",
            Defect::Scratch => "scratch",
        }
    }

    fn paint(self, pixels: &mut [[f64; 3]], size: usize, rng: &mut ChaCha8Rng) -> Vec<bool> {
        let s = size as f64;
        let mut mask = vec![false; size * size];
        let color: [f64; 3] = if rng.random_bool(0.5) {
            [0.95, 0.95, 0.9]
        } else {
            [0.02, 0.02, 0.05]
        };
        match self {
            Defect::Blob => {
                let cx = rng.random_range(0.25..0.75) * s;
                let cy = rng.random_range(0.25..0.75) * s;
                let rx = rng.random_range(0.06..0.14) * s;
                let ry = rng.random_range(0.06..0.14) * s;
                for y in 0..size {
                    for x in 0..size {
                        let dx = (x as f64 + 0.5 - cx) / rx;
                        let dy = (y as f64 + 0.5 - cy) / ry;
                        if dx * dx + dy * dy <= 1.0 {
                            mask[y * size + x] = true;
                        }
                    }
                }
            }
            Defect::Scratch => {
                let x0 = rng.random_range(0.2..0.8) * s;
                let y0 = rng.random_range(0.2..0.8) * s;
                let angle = rng.random_range(0.0..std::f64::consts::PI);
                let len = rng.random_range(0.3..0.5) * s;
                let half_width = (0.015 * s).max(1.0);
                let (dx, dy) = (angle.cos(), angle.sin());
                for y in 0..size {
                    for x in 0..size {
                        let px = x as f64 + 0.5 - x0;
                        let py = y as f64 + 0.5 - y0;
                        let along = px * dx + py * dy;
                        let across = (-px * dy + py * dx).abs();
                        if along.abs() <= len / 2.0 && across <= half_width {
                            mask[y * size + x] = true;
                        }
                    }
                }
            }
        }
        for (px, &m) in pixels.iter_mut().zip(&mask) {
            if m {
                *px = color;
            }
        }
        mask
    }
}

fn save_rgb(path: &Path, pixels: &[[f64; 3]], size: usize) -> Result<()> {
    let mut img = RgbImage::new(size as u32, size as u32);
    for (i, px) in pixels.iter().enumerate() {
        let rgb = px.map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8);
        img.put_pixel((i % size) as u32, (i / size) as u32, image::Rgb(rgb));
    }
    img.save(path).map_err(|e| RegadError::UnreadableImage {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn save_mask(path: &Path, mask: &[bool], size: usize) -> Result<()> {
    let raw: Vec<u8> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    let img = GrayImage::from_raw(size as u32, size as u32, raw).expect("size*size mask");
    img.save(path).map_err(|e| RegadError::UnreadableImage {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| RegadError::io(path, e))
}

/// Writes an MVTec-layout dataset under `out` and returns the written file
/// paths (images and masks) in creation order.
pub fn generate(out: &Path, cfg: &SynthConfig) -> Result<Vec<PathBuf>> {
    if cfg.size < 8 {
        return Err(RegadError::InvalidInput("synthetic images need size >= 8".into()));
    }
    let mut written = Vec::new();
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    for c in 0..cfg.categories {
        let name = format!("cat{c:02}");
        let texture = Texture::random(&mut master);
        let mut rng = ChaCha8Rng::seed_from_u64(master.random());
        let cat_dir = out.join(&name);

        let train_dir = cat_dir.join("train").join("good");
        mkdir(&train_dir)?;
        for i in 0..cfg.train_per_category {
            let px = texture.render(cfg.size, &mut rng);
            let p = train_dir.join(format!("{i:03}.png"));
            save_rgb(&p, &px, cfg.size)?;
            written.push(p);
        }

        // Test set: roughly a third normal, the rest alternating defect types.
        let n_good = if cfg.test_per_category == 0 {
            0
        } else {
            (cfg.test_per_category / 3).max(1)
        };
        let good_dir = cat_dir.join("test").join("good");
        mkdir(&good_dir)?;
        for i in 0..n_good {
            let px = texture.render(cfg.size, &mut rng);
            let p = good_dir.join(format!("{i:03}.png"));
            save_rgb(&p, &px, cfg.size)?;
            written.push(p);
        }
        for i in 0..cfg.test_per_category.saturating_sub(n_good) {
            let defect = if i % 2 == 0 { Defect::Blob } else { Defect::Scratch };
            let mut px = texture.render(cfg.size, &mut rng);
            let mask = defect.paint(&mut px, cfg.size, &mut rng);
            let img_dir = cat_dir.join("test").join(defect.name());
            let gt_dir = cat_dir.join("ground_truth").join(defect.name());
            mkdir(&img_dir)?;
            mkdir(&gt_dir)?;
            let p = img_dir.join(format!("{i:03}.png"));
            let m = gt_dir.join(format!("{i:03}_mask.png"));
            save_rgb(&p, &px, cfg.size)?;
            save_mask(&m, &mask, cfg.size)?;
            written.push(p);
            written.push(m);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{categories, load_dataset, DatasetKind, Label, Split};

    #[test]
    fn generated_tree_loads() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            categories: 2,
            train_per_category: 3,
            test_per_category: 4,
            size: 16,
            seed: 1,
        };
        generate(dir.path(), &cfg).unwrap();
        let recs = load_dataset(dir.path(), DatasetKind::Synthetic).unwrap();
        assert_eq!(categories(&recs), vec!["cat00", "cat01"]);
        assert_eq!(recs.len(), 2 * (3 + 4));
        let anomalous: Vec<_> = recs.iter().filter(|r| r.label == Label::Anomalous).collect();
        assert_eq!(anomalous.len(), 2 * 3);
        for r in anomalous {
            let s = r.load().unwrap();
            let mask = s.mask.unwrap();
            assert!(mask.iter().any(|&v| v == 1), "{} has an empty mask", r.path.display());
        }
        assert!(recs
            .iter()
            .filter(|r| r.split == Split::Train)
            .all(|r| r.label == Label::Normal));
        assert_eq!(load_dataset(dir.path(), DatasetKind::Synthetic).unwrap(), recs);
    }

    #[test]
    fn zero_test_images_is_an_empty_category() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            categories: 1,
            train_per_category: 2,
            test_per_category: 0,
            size: 16,
            seed: 0,
        };
        generate(dir.path(), &cfg).unwrap();
        let err = load_dataset(dir.path(), DatasetKind::Synthetic).unwrap_err();
        assert!(err.to_string().contains("empty category"), "{err}");
    }

    #[test]
    fn missing_mask_names_the_image() {
        let dir = tempfile::tempdir().unwrap();
        generate(
            dir.path(),
            &SynthConfig {
                categories: 1,
                train_per_category: 2,
                test_per_category: 3,
                size: 16,
                seed: 0,
            },
        )
        .unwrap();
        let mask = dir.path().join("cat00/ground_truth/blob/000_mask.png");
        fs::remove_file(&mask).unwrap();
        let err = load_dataset(dir.path(), DatasetKind::Synthetic).unwrap_err();
        assert!(err.to_string().contains("cat00/test/blob/000.png"), "{err}");
    }

    #[test]
    fn generation_is_seeded() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            categories: 1,
            train_per_category: 1,
            test_per_category: 2,
            size: 12,
            seed: 5,
        };
        let fa = generate(a.path(), &cfg).unwrap();
        let fb = generate(b.path(), &cfg).unwrap();
        for (pa, pb) in fa.iter().zip(&fb) {
            assert_eq!(fs::read(pa).unwrap(), fs::read(pb).unwrap());
        }
    }
}
