use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::{RegadError, Result};

/// Mann–Whitney AUROC with midranks for ties. `labels[i]` is true for positives.
///
/// The rank sum is accumulated in doubled integer units, so the result is the
/// exact ratio `(2·#wins + #ties) / (2·n⁺·n⁻)` rounded once.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(RegadError::ShapeMismatch(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(bad) = scores.iter().find(|s| s.is_nan()) {
        return Err(RegadError::InvalidInput(format!("score {bad} is not comparable")));
    }
    let pos = labels.iter().filter(|&&l| l).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(RegadError::SingleClass {
            positives: pos as usize,
            negatives: neg as usize,
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sum over positives of 2 × (1-based midrank).
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j share the midrank (i + 1 + j) / 2.
        let twice_mid = (i + 1 + j) as u128;
        let pos_in_group = order[i..j].iter().filter(|&&k| labels[k]).count() as u128;
        twice_rank_sum += twice_mid * pos_in_group;
        i = j;
    }
    let (p, n) = (pos as u128, neg as u128);
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2 * p * n) as f64)
}

/// Pairwise-count AUROC, O(n²); used to check [`auroc`].
pub fn auroc_pairwise(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let mut twice = 0u128;
    let (mut p, mut n) = (0u128, 0u128);
    for (i, &li) in labels.iter().enumerate() {
        if li {
            p += 1;
        } else {
            n += 1;
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if !lj {
                if scores[i] > scores[j] {
                    twice += 2;
                } else if scores[i] == scores[j] {
                    twice += 1;
                }
            }
        }
    }
    if p == 0 || n == 0 {
        return Err(RegadError::SingleClass {
            positives: p as usize,
            negatives: n as usize,
        });
    }
    Ok(twice as f64 / (2 * p * n) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PixelAucMode {
    /// One AUROC over every pixel of every image.
    Pooled,
    /// Mean of per-image AUROCs over images containing both classes.
    PerImage,
}

/// Pixel-level AUROC of score maps against binary masks of the same shape.
pub fn pixel_auroc(maps: &[&Array2<f64>], masks: &[&Array2<u8>], mode: PixelAucMode) -> Result<f64> {
    if maps.len() != masks.len() {
        return Err(RegadError::ShapeMismatch(format!(
            "{} maps vs {} masks",
            maps.len(),
            masks.len()
        )));
    }
    for (m, k) in maps.iter().zip(masks) {
        if m.dim() != k.dim() {
            return Err(RegadError::ShapeMismatch(format!("map {:?} vs mask {:?}", m.dim(), k.dim())));
        }
    }
    let defect_pixels: usize = masks.iter().map(|k| k.iter().filter(|&&v| v != 0).count()).sum();
    if defect_pixels == 0 {
        return Err(RegadError::SingleClass {
            positives: 0,
            negatives: masks.iter().map(|k| k.len()).sum(),
        });
    }
    match mode {
        PixelAucMode::Pooled => {
            let scores: Vec<f64> = maps.iter().flat_map(|m| m.iter().copied()).collect();
            let labels: Vec<bool> = masks.iter().flat_map(|k| k.iter().map(|&v| v != 0)).collect();
            auroc(&scores, &labels)
        }
        PixelAucMode::PerImage => {
            let mut aucs = Vec::new();
            for (m, k) in maps.iter().zip(masks) {
                let labels: Vec<bool> = k.iter().map(|&v| v != 0).collect();
                let p = labels.iter().filter(|&&l| l).count();
                if p == 0 || p == labels.len() {
                    continue;
                }
                let scores: Vec<f64> = m.iter().copied().collect();
                aucs.push(auroc(&scores, &labels)?);
            }
            Ok(aucs.iter().sum::<f64>() / aucs.len() as f64)
        }
    }
}
