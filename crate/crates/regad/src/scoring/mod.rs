//! Inference: Mahalanobis maps, inverse-affine realignment, upsampling and
//! the image-level score.

mod heatmap;

use ndarray::{Array2, Array3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use heatmap::{render_heatmap, save_heatmap};

use crate::dataio::ImageSample;
use crate::featnet::{invert_affine, AffineParams};
use crate::geometry::{gaussian_blur, resize_plane, warp_plane};
use crate::normest::{extract_features, FittedStats, GaussianGrid};
use crate::regtrain::RegadModel;
use crate::{RegadError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreConfig {
    /// Gaussian blur sigma in output pixels; 0 disables.
    pub smooth_sigma: f64,
    /// Images per forward pass.
    pub batch_size: usize,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            smooth_sigma: 4.0,
            batch_size: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyMap {
    /// Scores in feature coordinates, before realignment.
    pub grid_scores: Array2<f64>,
    /// `side × side` scores aligned with the input image.
    pub image_scores: Array2<f64>,
    /// Maximum of `image_scores`.
    pub image_score: f64,
}

/// Per-position Mahalanobis distance of an `H×W×C` map.
pub fn mahalanobis_map(features: &Array3<f64>, grid: &GaussianGrid) -> Result<Array2<f64>> {
    let (h, w, c) = features.dim();
    if (h, w, c) != (grid.height, grid.width, grid.channels) {
        return Err(RegadError::ShapeMismatch(format!(
            "features {:?} vs grid {:?}",
            (h, w, c),
            (grid.height, grid.width, grid.channels)
        )));
    }
    let scores: Vec<f64> = (0..h * w)
        .into_par_iter()
        .map(|pos| {
            let (i, j) = (pos / w, pos % w);
            let f: Vec<f64> = (0..c).map(|k| features[[i, j, k]]).collect();
            grid.mahalanobis(i, j, &f)
        })
        .collect();
    Ok(Array2::from_shape_vec((h, w), scores).expect("h*w scores"))
}

/// Undoes the three stage transforms, last stage first, at the map's own
/// resolution. Samples falling outside the map read as 0.
pub fn realign_map(scores: &Array2<f64>, params: &[AffineParams; 3]) -> Result<Array2<f64>> {
    let mut map = scores.clone();
    for p in params.iter().rev() {
        if p.theta == crate::geometry::Affine2::IDENTITY {
            continue;
        }
        let inv = invert_affine(p)?;
        map = warp_plane(map.view(), &inv.theta);
    }
    Ok(map)
}

/// Upsamples to `side × side`, optionally blurs, and takes the maximum.
pub fn finalize_map(realigned: &Array2<f64>, side: usize, smooth_sigma: f64) -> Result<AnomalyMap> {
    if side == 0 {
        return Err(RegadError::InvalidInput("side must be positive".into()));
    }
    let up = resize_plane(realigned.view(), side, side);
    let image_scores = gaussian_blur(up.view(), smooth_sigma);
    let image_score = image_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(AnomalyMap {
        grid_scores: realigned.clone(),
        image_scores,
        image_score,
    })
}

/// Full scoring path for a batch of raw images.
pub fn score_images(
    model: &RegadModel,
    stats: &FittedStats,
    images: &[&ImageSample],
    cfg: &ScoreConfig,
) -> Result<Vec<AnomalyMap>> {
    stats.check_compatible(model)?;
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(cfg.batch_size.max(1)) {
        let (maps, params) = extract_features(model, chunk, stats.meta.est_source)?;
        for (m, p) in maps.iter().zip(&params) {
            let m = match &stats.meta.channel_subset {
                Some(s) => s.apply(m),
                None => m.clone(),
            };
            let raw = mahalanobis_map(&m, &stats.grid)?;
            let realigned = realign_map(&raw, p)?;
            let mut am = finalize_map(&realigned, model.config.side, cfg.smooth_sigma)?;
            am.grid_scores = raw;
            out.push(am);
        }
    }
    Ok(out)
}

pub fn score_image(
    model: &RegadModel,
    stats: &FittedStats,
    image: &ImageSample,
    cfg: &ScoreConfig,
) -> Result<AnomalyMap> {
    Ok(score_images(model, stats, &[image], cfg)?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featnet::StnMode;
    use crate::geometry::Affine2;
    use crate::normest::fit_gaussian_grid;

    #[test]
    fn features_at_the_mean_score_zero() {
        let feats: Vec<Array3<f64>> = (0..4)
            .map(|n| Array3::from_shape_fn((3, 3, 2), |(i, j, k)| ((n * 5 + i + 2 * j + 3 * k) % 7) as f64))
            .collect();
        let grid = fit_gaussian_grid(&feats, 0.01).unwrap();
        let m = mahalanobis_map(&grid.mean_map(), &grid).unwrap();
        assert!(m.iter().all(|&v| v == 0.0));
        let wrong = Array3::zeros((3, 3, 5));
        assert!(mahalanobis_map(&wrong, &grid).is_err());
    }

    #[test]
    fn identity_params_leave_the_map_unchanged() {
        let map = Array2::from_shape_fn((5, 5), |(i, j)| (i * 5 + j) as f64);
        let params = [AffineParams::identity(StnMode::Affine); 3];
        assert_eq!(realign_map(&map, &params).unwrap(), map);
    }

    #[test]
    fn translation_is_undone() {
        // Stage 3 sampled its input one cell to the right, so a feature at
        // column x of the transformed map belongs to column x + 1 of the image.
        let n = 8;
        let mut map = Array2::zeros((n, n));
        map[[3, 2]] = 1.0;
        let shift = AffineParams::new(Affine2::translation(2.0 / n as f64, 0.0), StnMode::Translation).unwrap();
        let params = [AffineParams::identity(StnMode::Translation), AffineParams::identity(StnMode::Translation), shift];
        let out = realign_map(&map, &params).unwrap();
        assert_eq!(out[[3, 3]], 1.0);
        assert_eq!(out.sum(), 1.0);
    }

    #[test]
    fn finalize_constant_and_spike() {
        let c = Array2::from_elem((4, 4), 2.5);
        let am = finalize_map(&c, 16, 4.0).unwrap();
        assert!((am.image_score - 2.5).abs() < 1e-12);

        let mut spike = Array2::zeros((4, 4));
        spike[[1, 2]] = 1.0;
        let am = finalize_map(&spike, 16, 0.0).unwrap();
        let (mut best, mut at) = (f64::MIN, (0, 0));
        for ((i, j), &v) in am.image_scores.indexed_iter() {
            if v > best {
                best = v;
                at = (i, j);
            }
        }
        // Cell (1, 2) covers rows 4..8 and columns 8..12 of the 16×16 output.
        assert!((4..8).contains(&at.0) && (8..12).contains(&at.1), "{at:?}");
        assert_eq!(am.image_score, best);
    }

    #[test]
    fn scaling_and_shifting_scores() {
        let m = Array2::from_shape_fn((4, 4), |(i, j)| ((i * 3 + j * 5) % 7) as f64);
        let base = finalize_map(&m, 12, 0.0).unwrap().image_score;
        let scaled = finalize_map(&m.mapv(|v| 3.0 * v), 12, 0.0).unwrap().image_score;
        let shifted = finalize_map(&m.mapv(|v| v + 1.5), 12, 0.0).unwrap().image_score;
        assert!((scaled - 3.0 * base).abs() < 1e-12);
        assert!((shifted - (base + 1.5)).abs() < 1e-12);
    }
}
