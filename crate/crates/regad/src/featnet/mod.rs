//! Feature extractor: ResNet-18 stages 1-3, each followed by a spatial
//! transformer block.

pub mod affine;
mod backbone;
pub mod params;
mod sampler;
mod stn;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use candle_core::{DType, Tensor};
use ndarray::Array3;
use serde::{Deserialize, Serialize};

pub use affine::{apply_affine, invert_affine, AffineParams, StnMode, DET_FLOOR};
pub use backbone::{Backbone, STAGE_CHANNELS, STAGE_STRIDES};
pub use params::{ParamInit, ParamStore};
pub use sampler::sample_affine;
pub use stn::{theta_from_params, Stn};

use crate::geometry::Affine2;
use crate::{RegadError, Result};

/// Prefix of every backbone parameter inside a [`ParamStore`].
pub const BACKBONE_PREFIX: &str = "backbone.";
/// File looked up under the weight cache directory.
pub const BACKBONE_FILE: &str = "resnet18.safetensors";

/// What feeds stage `i + 1`: the transformed or the raw output of stage `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StnChaining {
    Post,
    Pre,
}

impl fmt::Display for StnChaining {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StnChaining::Post => "post",
            StnChaining::Pre => "pre",
        })
    }
}

impl FromStr for StnChaining {
    type Err = RegadError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "post" => Ok(StnChaining::Post),
            "pre" => Ok(StnChaining::Pre),
            other => Err(RegadError::Config(format!("unknown STN chaining `{other}`"))),
        }
    }
}

/// Where initial backbone weights come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackboneInit {
    /// torchvision-named safetensors file.
    Pretrained(PathBuf),
    /// Seeded random initialization.
    Random,
}

impl BackboneInit {
    /// `$REGAD_CACHE/resnet18.safetensors`, defaulting to `~/.cache/regad`.
    pub fn default_cache_path() -> PathBuf {
        let dir = std::env::var_os("REGAD_CACHE")
            .map(PathBuf::from)
            .or_else(|| std::env::var_os("HOME").map(|h| PathBuf::from(h).join(".cache").join("regad")))
            .unwrap_or_else(|| PathBuf::from(".regad-cache"));
        dir.join(BACKBONE_FILE)
    }
}

/// Batched outputs of one forward pass.
#[derive(Debug, Clone)]
pub struct StageOutputs {
    pub pre: [Tensor; 3],
    pub post: [Tensor; 3],
    /// `(B, 6)` per stage.
    pub theta: [Tensor; 3],
}

/// Per-image feature maps before and after each STN, plus the transforms.
#[derive(Debug, Clone)]
pub struct FeatureSet {
    pub pre: [Array3<f32>; 3],
    pub post: [Array3<f32>; 3],
    pub params: [AffineParams; 3],
}

fn tensor_to_array3(t: &Tensor) -> Result<Array3<f32>> {
    let (c, h, w) = t.dims3()?;
    let v = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    Ok(Array3::from_shape_vec((c, h, w), v).expect("dims3 matches length"))
}

fn theta_rows(theta: &Tensor) -> Result<Vec<Affine2>> {
    let rows = theta.to_dtype(DType::F64)?.to_vec2::<f64>()?;
    Ok(rows
        .into_iter()
        .map(|r| Affine2([[r[0], r[1], r[2]], [r[3], r[4], r[5]]]))
        .collect())
}

impl StageOutputs {
    pub fn batch_size(&self) -> Result<usize> {
        Ok(self.post[0].dim(0)?)
    }

    /// Predicted transforms of item `b`, one per stage.
    pub fn params(&self, b: usize, mode: StnMode) -> Result<[AffineParams; 3]> {
        let mut out = [AffineParams::identity(mode); 3];
        for (s, theta) in self.theta.iter().enumerate() {
            out[s] = AffineParams {
                theta: theta_rows(&theta.narrow(0, b, 1)?)?[0],
                mode,
            };
        }
        Ok(out)
    }

    /// Splits the batch into per-image feature sets.
    pub fn feature_sets(&self, mode: StnMode) -> Result<Vec<FeatureSet>> {
        let n = self.batch_size()?;
        (0..n)
            .map(|b| {
                let grab = |ts: &[Tensor; 3], s: usize| tensor_to_array3(&ts[s].get(b)?);
                Ok(FeatureSet {
                    pre: [grab(&self.pre, 0)?, grab(&self.pre, 1)?, grab(&self.pre, 2)?],
                    post: [grab(&self.post, 0)?, grab(&self.post, 1)?, grab(&self.post, 2)?],
                    params: self.params(b, mode)?,
                })
            })
            .collect()
    }
}

pub struct FeatureNet {
    backbone: Backbone,
    stns: [Stn; 3],
    mode: StnMode,
    chaining: StnChaining,
}

impl FeatureNet {
    /// Registers all parameters under `backbone.` and `stn{1,2,3}.`.
    pub fn new(store: &mut ParamStore, mode: StnMode, chaining: StnChaining) -> Result<Self> {
        let backbone = Backbone::new(store, BACKBONE_PREFIX.trim_end_matches('.'))?;
        let stns = [
            Stn::new(store, "stn1", STAGE_CHANNELS[0], mode)?,
            Stn::new(store, "stn2", STAGE_CHANNELS[1], mode)?,
            Stn::new(store, "stn3", STAGE_CHANNELS[2], mode)?,
        ];
        Ok(FeatureNet {
            backbone,
            stns,
            mode,
            chaining,
        })
    }

    pub fn mode(&self) -> StnMode {
        self.mode
    }

    pub fn chaining(&self) -> StnChaining {
        self.chaining
    }

    /// Copies torchvision ResNet-18 weights into the backbone parameters.
    pub fn load_backbone(store: &mut ParamStore, path: &Path) -> Result<usize> {
        store.load_prefixed(path, BACKBONE_PREFIX, "")
    }

    /// The three raw stage outputs (no STN), for a `(B, 3, H, W)` batch.
    pub fn extract_stages(&self, x: &Tensor, train: bool) -> Result<[Tensor; 3]> {
        let s0 = self.backbone.stem(x, train)?;
        let f1 = self.backbone.stage(0, &s0, train)?;
        let f2 = self.backbone.stage(1, &f1, train)?;
        let f3 = self.backbone.stage(2, &f2, train)?;
        Ok([f1, f2, f3])
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<StageOutputs> {
        let mut h = self.backbone.stem(x, train)?;
        let mut pre = Vec::with_capacity(3);
        let mut post = Vec::with_capacity(3);
        let mut theta = Vec::with_capacity(3);
        for s in 0..3 {
            let f = self.backbone.stage(s, &h, train)?;
            let (t, th) = self.stns[s].forward(&f)?;
            h = match self.chaining {
                StnChaining::Post => t.clone(),
                StnChaining::Pre => f.clone(),
            };
            pre.push(f);
            post.push(t);
            theta.push(th);
        }
        let arr = |v: Vec<Tensor>| -> [Tensor; 3] { v.try_into().expect("three stages") };
        Ok(StageOutputs {
            pre: arr(pre),
            post: arr(post),
            theta: arr(theta),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn net(mode: StnMode) -> (ParamStore, FeatureNet) {
        let mut store = ParamStore::new(0, DType::F32, &Device::Cpu);
        let net = FeatureNet::new(&mut store, mode, StnChaining::Post).unwrap();
        (store, net)
    }

    #[test]
    fn stage_shapes_follow_strides() {
        let (_s, net) = net(StnMode::RotationScale);
        let x = Tensor::zeros((1, 3, 64, 64), DType::F32, &Device::Cpu).unwrap();
        let out = net.forward(&x, false).unwrap();
        let dims: Vec<Vec<usize>> = out.post.iter().map(|t| t.dims().to_vec()).collect();
        assert_eq!(dims, vec![vec![1, 64, 16, 16], vec![1, 128, 8, 8], vec![1, 256, 4, 4]]);
        for t in out.pre.iter().chain(&out.post) {
            let v = t.flatten_all().unwrap().to_vec1::<f32>().unwrap();
            assert!(v.iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn inference_is_deterministic_and_identity_at_init() {
        let (_s, net) = net(StnMode::Affine);
        let data: Vec<f32> = (0..3 * 32 * 32).map(|i| ((i % 17) as f32) / 8.0 - 1.0).collect();
        let x = Tensor::from_vec(data, (1, 3, 32, 32), &Device::Cpu).unwrap();
        let a = net.forward(&x, false).unwrap();
        let b = net.forward(&x, false).unwrap();
        for s in 0..3 {
            let pa = a.post[s].flatten_all().unwrap().to_vec1::<f32>().unwrap();
            let pb = b.post[s].flatten_all().unwrap().to_vec1::<f32>().unwrap();
            let pre = a.pre[s].flatten_all().unwrap().to_vec1::<f32>().unwrap();
            assert_eq!(pa, pb);
            assert_eq!(pa, pre);
        }
        let fs = a.feature_sets(StnMode::Affine).unwrap();
        assert_eq!(fs.len(), 1);
        assert!(fs[0].params.iter().all(|p| p.theta == Affine2::IDENTITY));
    }

    #[test]
    fn missing_backbone_weights_is_an_error() {
        let (mut store, _net) = net(StnMode::None);
        let err = FeatureNet::load_backbone(&mut store, Path::new("/nonexistent/resnet18.safetensors"))
            .unwrap_err();
        assert_eq!(err.class(), "checkpoint");
    }

    #[test]
    fn backbone_loads_torchvision_names() {
        let (store, _net) = net(StnMode::None);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.safetensors");
        // Re-export the backbone under bare torchvision names, then load into a
        // differently seeded network.
        let tensors: std::collections::HashMap<String, Tensor> = store
            .varmap()
            .data()
            .lock()
            .unwrap()
            .iter()
            .filter_map(|(n, v)| {
                n.strip_prefix(BACKBONE_PREFIX)
                    .map(|s| (s.to_string(), v.as_tensor().clone()))
            })
            .collect();
        assert!(tensors.contains_key("layer2.0.downsample.0.weight"));
        candle_core::safetensors::save(&tensors, &path).unwrap();

        let mut other = ParamStore::new(99, DType::F32, &Device::Cpu);
        FeatureNet::new(&mut other, StnMode::None, StnChaining::Post).unwrap();
        let n = FeatureNet::load_backbone(&mut other, &path).unwrap();
        assert_eq!(n, tensors.len());
        let a = store.snapshot().unwrap();
        let b = other.snapshot().unwrap();
        assert_eq!(a["backbone.layer3.1.conv2.weight"], b["backbone.layer3.1.conv2.weight"]);
    }
}
