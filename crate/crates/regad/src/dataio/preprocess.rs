use candle_core::{Device, Tensor};
use ndarray::{s, Array3, Axis};
use serde::{Deserialize, Serialize};

use super::ImageSample;
use crate::geometry::{resize_nearest, resize_plane_f32};
use crate::{RegadError, Result};

/// Per-channel standardization constants of the pretrained backbone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Normalization {
    pub const IMAGENET: Normalization = Normalization {
        mean: [0.485, 0.456, 0.406],
        std: [0.229, 0.224, 0.225],
    };
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization::IMAGENET
    }
}

/// Bilinear resize of the pixels to `side × side`; the mask (if any) is
/// resized nearest-neighbour and stays binary.
pub fn resize(sample: &ImageSample, side: usize) -> Result<ImageSample> {
    if side == 0 {
        return Err(RegadError::InvalidInput("side must be positive".into()));
    }
    let (h, w, c) = sample.pixels.dim();
    if h == 0 || w == 0 {
        return Err(RegadError::InvalidInput(format!(
            "{} has zero area",
            sample.source_path.display()
        )));
    }
    let mut pixels = Array3::<f32>::zeros((side, side, 3));
    for ch in 0..3 {
        // Gray inputs are replicated into three channels.
        let src = sample.pixels.index_axis(Axis(2), ch.min(c - 1));
        let resized = resize_plane_f32(src, side, side);
        pixels.slice_mut(s![.., .., ch]).assign(&resized);
    }
    let mask = sample
        .mask
        .as_ref()
        .map(|m| resize_nearest(m.view(), side, side).mapv(|v| u8::from(v != 0)));
    Ok(ImageSample {
        pixels,
        mask,
        ..sample.clone()
    })
}

pub fn standardize(sample: &ImageSample, norm: &Normalization) -> ImageSample {
    let mut out = sample.clone();
    for ch in 0..3 {
        let (m, sd) = (norm.mean[ch], norm.std[ch]);
        out.pixels
            .slice_mut(s![.., .., ch])
            .mapv_inplace(|v| (v - m) / sd);
    }
    out.standardized = true;
    out
}

/// Resize followed by optional standardization.
pub fn preprocess(
    sample: &ImageSample,
    side: usize,
    norm: Option<&Normalization>,
) -> Result<ImageSample> {
    let resized = resize(sample, side)?;
    Ok(match norm {
        Some(n) if !resized.standardized => standardize(&resized, n),
        _ => resized,
    })
}

/// Stacks equally-sized samples into a `(B, 3, H, W)` f32 tensor.
pub fn to_batch_tensor(samples: &[&ImageSample], device: &Device) -> Result<Tensor> {
    let first = samples
        .first()
        .ok_or_else(|| RegadError::InvalidInput("empty batch".into()))?;
    let (h, w, _) = first.pixels.dim();
    let mut data = Vec::with_capacity(samples.len() * 3 * h * w);
    for s in samples {
        if s.pixels.dim() != (h, w, 3) {
            return Err(RegadError::ShapeMismatch(format!(
                "batch mixes {:?} and {:?}",
                (h, w, 3),
                s.pixels.dim()
            )));
        }
        let chw = s.pixels.view().permuted_axes([2, 0, 1]);
        data.extend(chw.iter().copied());
    }
    Ok(Tensor::from_vec(data, (samples.len(), 3, h, w), device)?)
}
