//! Support-set augmentation: the Cartesian product of gray, flip, rotate and
//! translate, each family contributing "skip" or one of its variants.
//!
//! Families compose as gray → flip → rotate → translate. The three geometric
//! steps are folded into one affine map so every pooled image is resampled
//! exactly once.

use std::fmt;

use ndarray::{s, Axis};
use serde::{Deserialize, Serialize};

use super::ImageSample;
use crate::geometry::{warp_plane_f32, Affine2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlipAxis {
    Horizontal,
    Vertical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationConfig {
    pub enable_gray: bool,
    pub enable_flip: bool,
    pub enable_translate: bool,
    pub enable_rotate: bool,
    /// Degrees, counter-clockwise as displayed.
    pub rotation_angles: Vec<f64>,
    /// Fractions of the image side; positive moves content right / down.
    pub translation_offsets: Vec<(f64, f64)>,
    pub flip_axes: Vec<FlipAxis>,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            enable_gray: true,
            enable_flip: true,
            enable_translate: true,
            enable_rotate: true,
            rotation_angles: vec![15.0, -15.0, 30.0, -30.0, 45.0, -45.0, 90.0, -90.0],
            translation_offsets: vec![(0.1, 0.0), (-0.1, 0.0), (0.0, 0.1), (0.0, -0.1)],
            flip_axes: vec![FlipAxis::Horizontal, FlipAxis::Vertical],
        }
    }
}

impl AugmentationConfig {
    pub fn disabled() -> Self {
        AugmentationConfig {
            enable_gray: false,
            enable_flip: false,
            enable_translate: false,
            enable_rotate: false,
            ..Default::default()
        }
    }

    /// Number of chains per support image.
    pub fn combination_count(&self) -> usize {
        let f = |on: bool, n: usize| if on { 1 + n } else { 1 };
        f(self.enable_gray, 1)
            * f(self.enable_flip, self.flip_axes.len())
            * f(self.enable_rotate, self.rotation_angles.len())
            * f(self.enable_translate, self.translation_offsets.len())
    }

    /// All chains in deterministic order; the first is always the identity.
    pub fn combinations(&self) -> Vec<AugChain> {
        let grays: Vec<bool> = if self.enable_gray {
            vec![false, true]
        } else {
            vec![false]
        };
        let flips = with_skip(self.enable_flip, &self.flip_axes);
        let rotations = with_skip(self.enable_rotate, &self.rotation_angles);
        let translations = with_skip(self.enable_translate, &self.translation_offsets);

        let mut out = Vec::with_capacity(self.combination_count());
        for &gray in &grays {
            for &flip in &flips {
                for &rotate in &rotations {
                    for &translate in &translations {
                        out.push(AugChain {
                            gray,
                            flip,
                            rotate,
                            translate,
                        });
                    }
                }
            }
        }
        out
    }
}

fn with_skip<T: Copy>(enabled: bool, variants: &[T]) -> Vec<Option<T>> {
    let mut v = vec![None];
    if enabled {
        v.extend(variants.iter().copied().map(Some));
    }
    v
}

/// One concrete augmentation: which variant (if any) of each family applies.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AugChain {
    pub gray: bool,
    pub flip: Option<FlipAxis>,
    pub rotate: Option<f64>,
    pub translate: Option<(f64, f64)>,
}

impl AugChain {
    pub fn is_identity(&self) -> bool {
        *self == AugChain::default()
    }

    /// Sampling matrix (output → source) of the geometric part.
    pub fn geometric(&self) -> Affine2 {
        let flip = match self.flip {
            Some(FlipAxis::Horizontal) => Affine2([[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
            Some(FlipAxis::Vertical) => Affine2([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0]]),
            None => Affine2::IDENTITY,
        };
        let rotate = match self.rotate {
            Some(deg) => {
                // y points down, so a visually counter-clockwise turn samples
                // the source at R(+a) applied to the output location.
                let (s, c) = deg.to_radians().sin_cos();
                let snap = |v: f64| if v.abs() < 1e-12 { 0.0 } else { v };
                let (s, c) = (snap(s), snap(c));
                Affine2([[c, s, 0.0], [-s, c, 0.0]])
            }
            None => Affine2::IDENTITY,
        };
        let translate = match self.translate {
            Some((dx, dy)) => Affine2::translation(-2.0 * dx, -2.0 * dy),
            None => Affine2::IDENTITY,
        };
        // out(x) = flipped(rotated(translated)): the source of x is F·R·T·x.
        flip.compose(&rotate).compose(&translate)
    }
}

impl fmt::Display for AugChain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_identity() {
            return write!(f, "identity");
        }
        let mut parts = Vec::new();
        if self.gray {
            parts.push("gray".to_string());
        }
        match self.flip {
            Some(FlipAxis::Horizontal) => parts.push("flip_h".into()),
            Some(FlipAxis::Vertical) => parts.push("flip_v".into()),
            None => {}
        }
        if let Some(a) = self.rotate {
            parts.push(format!("rot{a:+}"));
        }
        if let Some((dx, dy)) = self.translate {
            parts.push(format!("shift({dx:+},{dy:+})"));
        }
        write!(f, "{}", parts.join("+"))
    }
}

/// A pooled support image together with the chain that produced it.
#[derive(Debug, Clone)]
pub struct AugmentedSample {
    pub sample: ImageSample,
    pub chain: AugChain,
    /// Index of the originating image within the support set.
    pub source_index: usize,
}

/// Applies one chain to an unstandardized image.
pub fn apply_chain(sample: &ImageSample, chain: &AugChain) -> ImageSample {
    let mut out = sample.clone();
    if chain.gray {
        let mean = sample.pixels.mean_axis(Axis(2)).expect("three channels");
        for ch in 0..3 {
            out.pixels.slice_mut(s![.., .., ch]).assign(&mean);
        }
    }
    let theta = chain.geometric();
    if theta != Affine2::IDENTITY {
        for ch in 0..3 {
            let warped = warp_plane_f32(out.pixels.index_axis(Axis(2), ch), &theta);
            out.pixels.slice_mut(s![.., .., ch]).assign(&warped);
        }
        // Support images are normal and carry no mask; keep any mask aligned anyway.
        if let Some(mask) = &sample.mask {
            let m = warp_plane_f32(mask.mapv(f32::from).view(), &theta);
            out.mask = Some(m.mapv(|v| u8::from(v >= 0.5)));
        }
    }
    out
}

/// Expands the support set into `k × combination_count` images, ordered by
/// support image, then by chain.
pub fn build_support_pool(support: &[ImageSample], cfg: &AugmentationConfig) -> Vec<AugmentedSample> {
    let chains = cfg.combinations();
    support
        .iter()
        .enumerate()
        .flat_map(|(i, img)| {
            chains.iter().map(move |chain| AugmentedSample {
                sample: apply_chain(img, chain),
                chain: *chain,
                source_index: i,
            })
        })
        .collect()
}
