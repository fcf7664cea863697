use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array3, ArrayView3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::featnet::FeatureSet;
use crate::geometry::resize_plane;
use crate::{RegadError, Result};

/// Which features feed the Gaussian grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstSource {
    /// Concatenated STN outputs of all three stages.
    Stn,
    /// Encoder output `z` of the stage-3 STN output.
    Encoder,
}

impl fmt::Display for EstSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EstSource::Stn => "stn",
            EstSource::Encoder => "encoder",
        })
    }
}

impl FromStr for EstSource {
    type Err = RegadError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stn" => Ok(EstSource::Stn),
            "encoder" => Ok(EstSource::Encoder),
            other => Err(RegadError::Config(format!("unknown estimation source `{other}`"))),
        }
    }
}

/// `C×H×W` f32 map to `H'×W'×C` f64, bilinearly resized.
pub fn to_hwc(map: ArrayView3<f32>, out_h: usize, out_w: usize) -> Array3<f64> {
    let c = map.dim().0;
    let mut out = Array3::zeros((out_h, out_w, c));
    for (k, plane) in map.axis_iter(Axis(0)).enumerate() {
        let wide = plane.mapv(f64::from);
        out.slice_mut(s![.., .., k]).assign(&resize_plane(wide.view(), out_h, out_w));
    }
    out
}

/// Upsamples stages 2 and 3 to stage-1 resolution and concatenates channels
/// in stage order, giving `H₁×W₁×(C₁+C₂+C₃)`.
pub fn aggregate_features(fs: &FeatureSet) -> Array3<f64> {
    let (_, h, w) = fs.post[0].dim();
    let parts: Vec<Array3<f64>> = fs.post.iter().map(|m| to_hwc(m.view(), h, w)).collect();
    let views: Vec<ArrayView3<f64>> = parts.iter().map(|p| p.view()).collect();
    ndarray::concatenate(Axis(2), &views).expect("stage maps share the spatial grid")
}

/// A fixed random subset of channels, kept in increasing order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelSubset(pub Vec<usize>);

impl ChannelSubset {
    pub fn random(total: usize, keep: usize, seed: u64) -> Result<Self> {
        if keep == 0 || keep > total {
            return Err(RegadError::Config(format!(
                "cannot keep {keep} of {total} channels"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = rand::seq::index::sample(&mut rng, total, keep).into_vec();
        idx.sort_unstable();
        Ok(ChannelSubset(idx))
    }

    pub fn apply(&self, map: &Array3<f64>) -> Array3<f64> {
        map.select(Axis(2), &self.0)
    }
}
