//! Dataset ingestion, leave-one-out splits, k-shot support sampling,
//! preprocessing and support-set augmentation.

mod augment;
mod dataset;
mod preprocess;
pub mod synth;

use std::path::PathBuf;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

pub use augment::{
    apply_chain, build_support_pool, AugChain, AugmentationConfig, AugmentedSample, FlipAxis,
};
pub use dataset::{
    categories, load_dataset, load_image, make_loo_split, sample_support, DatasetKind, LooSplit, SampleRecord,
    SupportSet,
};
pub use preprocess::{preprocess, resize, standardize, to_batch_tensor, Normalization};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Anomalous,
}

/// One decoded image. `pixels` is `H×W×3`; values lie in `[0, 1]` until
/// [`standardize`] is applied.
#[derive(Debug, Clone)]
pub struct ImageSample {
    pub pixels: Array3<f32>,
    pub category: String,
    pub split: Split,
    pub label: Label,
    /// `H×W`, 1 = defect pixel.
    pub mask: Option<Array2<u8>>,
    pub source_path: PathBuf,
    pub standardized: bool,
}

impl ImageSample {
    pub fn height(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().1
    }

    /// Checks the label/mask/range invariants.
    pub fn check(&self) -> crate::Result<()> {
        use crate::RegadError;
        let (h, w, c) = self.pixels.dim();
        if c != 3 {
            return Err(RegadError::ShapeMismatch(format!(
                "{} has {c} channels, expected 3",
                self.source_path.display()
            )));
        }
        if self.split == Split::Train && self.label != Label::Normal {
            return Err(RegadError::InvalidInput(format!(
                "{} is a training image labelled anomalous",
                self.source_path.display()
            )));
        }
        if let Some(mask) = &self.mask {
            if self.label != Label::Anomalous {
                return Err(RegadError::InvalidInput(format!(
                    "{} carries a mask but is labelled normal",
                    self.source_path.display()
                )));
            }
            if mask.dim() != (h, w) {
                return Err(RegadError::ShapeMismatch(format!(
                    "{}: mask {:?} vs image {:?}",
                    self.source_path.display(),
                    mask.dim(),
                    (h, w)
                )));
            }
        }
        if !self.standardized && self.pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(RegadError::InvalidInput(format!(
                "{} has pixel values outside [0, 1]",
                self.source_path.display()
            )));
        }
        Ok(())
    }
}
