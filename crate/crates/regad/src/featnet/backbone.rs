//! ResNet-18 stem and the first three residual stages, with parameter names
//! following the torchvision layout (`conv1`, `bn1`, `layer1.0.conv1`, ...).

use candle_core::{Module, ModuleT, Tensor};
use candle_nn::{BatchNorm, Conv2d};

use super::params::ParamStore;
use crate::Result;

/// Output channels of stages 1..=3.
pub const STAGE_CHANNELS: [usize; 3] = [64, 128, 256];
/// Downsampling factor of stages 1..=3 relative to the input.
pub const STAGE_STRIDES: [usize; 3] = [4, 8, 16];

struct BasicBlock {
    conv1: Conv2d,
    bn1: BatchNorm,
    conv2: Conv2d,
    bn2: BatchNorm,
    downsample: Option<(Conv2d, BatchNorm)>,
}

impl BasicBlock {
    fn new(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize, stride: usize) -> Result<Self> {
        let downsample = if stride != 1 || c_in != c_out {
            Some((
                store.conv_kaiming(&format!("{name}.downsample.0"), c_in, c_out, 1, stride, 0)?,
                store.batch_norm(&format!("{name}.downsample.1"), c_out)?,
            ))
        } else {
            None
        };
        Ok(BasicBlock {
            conv1: store.conv_kaiming(&format!("{name}.conv1"), c_in, c_out, 3, stride, 1)?,
            bn1: store.batch_norm(&format!("{name}.bn1"), c_out)?,
            conv2: store.conv_kaiming(&format!("{name}.conv2"), c_out, c_out, 3, 1, 1)?,
            bn2: store.batch_norm(&format!("{name}.bn2"), c_out)?,
            downsample,
        })
    }

    fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let h = self.bn1.forward_t(&self.conv1.forward(x)?, train)?.relu()?;
        let h = self.bn2.forward_t(&self.conv2.forward(&h)?, train)?;
        let shortcut = match &self.downsample {
            Some((conv, bn)) => bn.forward_t(&conv.forward(x)?, train)?,
            None => x.clone(),
        };
        Ok(h.add(&shortcut)?.relu()?)
    }
}

struct Stage(Vec<BasicBlock>);

impl Stage {
    fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        self.0.iter().try_fold(x.clone(), |h, b| b.forward_t(&h, train))
    }
}

pub struct Backbone {
    conv1: Conv2d,
    bn1: BatchNorm,
    stages: [Stage; 3],
}

impl Backbone {
    pub fn new(store: &mut ParamStore, prefix: &str) -> Result<Self> {
        let conv1 = store.conv_kaiming(&format!("{prefix}.conv1"), 3, 64, 7, 2, 3)?;
        let bn1 = store.batch_norm(&format!("{prefix}.bn1"), 64)?;
        let mut stage = |idx: usize, c_in: usize, c_out: usize, stride: usize| -> Result<Stage> {
            let name = format!("{prefix}.layer{idx}");
            Ok(Stage(vec![
                BasicBlock::new(store, &format!("{name}.0"), c_in, c_out, stride)?,
                BasicBlock::new(store, &format!("{name}.1"), c_out, c_out, 1)?,
            ]))
        };
        let stages = [stage(1, 64, 64, 1)?, stage(2, 64, 128, 2)?, stage(3, 128, 256, 2)?];
        Ok(Backbone { conv1, bn1, stages })
    }

    /// conv 7×7/2, BN, ReLU, max-pool 3×3/2.
    pub fn stem(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let h = self.bn1.forward_t(&self.conv1.forward(x)?, train)?.relu()?;
        // Zero padding is equivalent to -inf padding after a ReLU.
        let h = h.pad_with_zeros(2, 1, 1)?.pad_with_zeros(3, 1, 1)?;
        max_pool_3x3_s2(&h)
    }

    /// Runs residual stage `idx` (0-based).
    pub fn stage(&self, idx: usize, x: &Tensor, train: bool) -> Result<Tensor> {
        self.stages[idx].forward_t(x, train)
    }
}

/// 3×3 max pool with stride 2 on an already padded map.
///
/// Built from shifted slices and `maximum` so that it has a backward pass.
fn max_pool_3x3_s2(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let (oh, ow) = ((h - 3) / 2 + 1, (w - 3) / 2 + 1);
    let mut out: Option<Tensor> = None;
    for dy in 0..3 {
        for dx in 0..3 {
            // Rows dy, dy+2, ..., dy+2(oh-1): take 2·oh rows and keep every other one.
            let rows = x.narrow(2, dy, (2 * oh).min(h - dy))?;
            let rows = if rows.dim(2)? < 2 * oh { rows.pad_with_zeros(2, 0, 1)? } else { rows };
            let rows = rows.reshape((b, c, oh, 2, w))?.narrow(3, 0, 1)?.squeeze(3)?;
            let cols = rows.narrow(3, dx, (2 * ow).min(w - dx))?;
            let cols = if cols.dim(3)? < 2 * ow { cols.pad_with_zeros(3, 0, 1)? } else { cols };
            let tap = cols.reshape((b, c, oh, ow, 2))?.narrow(4, 0, 1)?.squeeze(4)?;
            out = Some(match out {
                None => tap,
                Some(acc) => acc.maximum(&tap)?,
            });
        }
    }
    Ok(out.expect("nine taps"))
}

#[cfg(test)]
mod tests {
    use candle_core::{DType, Device, Var};

    use super::*;

    #[test]
    fn max_pool_matches_candle_forward_and_has_gradient() {
        let dev = Device::Cpu;
        for side in [9usize, 10, 18] {
            let x = Var::from_tensor(&Tensor::randn(0f32, 1.0, (2, 3, side, side), &dev).unwrap()).unwrap();
            let ours = max_pool_3x3_s2(x.as_tensor()).unwrap();
            let reference = x.as_tensor().max_pool2d_with_stride(3, 2).unwrap();
            assert_eq!(ours.dims(), reference.dims());
            let diff = (ours.clone() - reference).unwrap().abs().unwrap().max_all().unwrap();
            assert_eq!(diff.to_scalar::<f32>().unwrap(), 0.0);
            let grads = ours.sum_all().unwrap().backward().unwrap();
            let g = grads.get(x.as_tensor()).unwrap().to_dtype(DType::F32).unwrap();
            assert_eq!(g.dims(), x.dims());
        }
    }
}
