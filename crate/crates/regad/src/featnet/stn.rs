//! Spatial transformer block: a small localization head regressing the free
//! parameters of the selected transform family, then affine resampling.

use candle_core::{Module, Tensor};
use candle_nn::{Conv2d, Linear};

use super::affine::{StnMode, DET_FLOOR, SHEAR_LIMIT};
use super::params::ParamStore;
use super::sampler::sample_affine;
use crate::Result;

const HIDDEN: usize = 32;

pub struct Stn {
    mode: StnMode,
    head: Option<LocalizationHead>,
}

struct LocalizationHead {
    conv1: Conv2d,
    conv2: Conv2d,
    fc1: Linear,
    fc2: Linear,
}

impl Stn {
    pub fn new(store: &mut ParamStore, prefix: &str, channels: usize, mode: StnMode) -> Result<Self> {
        let head = if mode == StnMode::None {
            None
        } else {
            Some(LocalizationHead {
                conv1: store.conv_uniform(&format!("{prefix}.loc.conv1"), channels, HIDDEN, 3, 2, 1, true)?,
                conv2: store.conv_uniform(&format!("{prefix}.loc.conv2"), HIDDEN, HIDDEN, 3, 2, 1, true)?,
                fc1: store.linear(&format!("{prefix}.loc.fc1"), HIDDEN, HIDDEN)?,
                fc2: store.linear_with_bias(&format!("{prefix}.loc.fc2"), HIDDEN, &mode.identity_params())?,
            })
        };
        Ok(Stn { mode, head })
    }

    pub fn mode(&self) -> StnMode {
        self.mode
    }

    /// `(B, 6)` row-major theta for each item of the batch.
    pub fn predict_theta(&self, x: &Tensor) -> Result<Tensor> {
        let b = x.dim(0)?;
        let Some(head) = &self.head else {
            let id = Tensor::new(&[1f32, 0., 0., 0., 1., 0.], x.device())?.to_dtype(x.dtype())?;
            return Ok(id.unsqueeze(0)?.broadcast_as((b, 6))?.contiguous()?);
        };
        let h = head.conv1.forward(x)?.relu()?;
        let h = head.conv2.forward(&h)?.relu()?;
        let h = h.mean((2, 3))?;
        let h = head.fc1.forward(&h)?.relu()?;
        let p = head.fc2.forward(&h)?;
        theta_from_params(self.mode, &p)
    }

    /// Returns the transformed map and its `(B, 6)` theta.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let theta = self.predict_theta(x)?;
        if self.mode == StnMode::None {
            return Ok((x.clone(), theta));
        }
        Ok((sample_affine(x, &theta)?, theta))
    }
}

/// Tensor mirror of [`StnMode::theta_from_params`]; `p` is `(B, n_params)`.
pub fn theta_from_params(mode: StnMode, p: &Tensor) -> Result<Tensor> {
    let b = p.dim(0)?;
    let col = |i: usize| p.narrow(1, i, 1);
    let zeros = Tensor::zeros((b, 1), p.dtype(), p.device())?;
    let ones = zeros.ones_like()?;
    let scale = |t: Tensor| -> Result<Tensor> { Ok(t.maximum(DET_FLOOR.sqrt())?) };
    let sim = |s: &Tensor, phi: Option<Tensor>, tx: &Tensor, ty: &Tensor| -> Result<Tensor> {
        let (sn, cs) = match phi {
            Some(phi) => (phi.sin()?, phi.cos()?),
            None => (zeros.clone(), ones.clone()),
        };
        let a = s.mul(&cs)?;
        let b = s.mul(&sn)?;
        Ok(Tensor::cat(&[&a, &b.neg()?, tx, &b, &a, ty], 1)?)
    };
    let theta = match mode {
        StnMode::None => Tensor::cat(&[&ones, &zeros, &zeros, &zeros, &ones, &zeros], 1)?,
        StnMode::Translation => Tensor::cat(&[&ones, &zeros, &col(0)?, &zeros, &ones, &col(1)?], 1)?,
        StnMode::Rotation => sim(&ones, Some(col(0)?), &zeros, &zeros)?,
        StnMode::Scale => sim(&scale(col(0)?)?, None, &zeros, &zeros)?,
        StnMode::Shear => {
            let a = col(0)?.clamp(-SHEAR_LIMIT, SHEAR_LIMIT)?;
            let b = col(1)?.clamp(-SHEAR_LIMIT, SHEAR_LIMIT)?;
            Tensor::cat(&[&ones, &a, &zeros, &b, &ones, &zeros], 1)?
        }
        StnMode::RotationScale => sim(&scale(col(0)?)?, Some(col(1)?), &zeros, &zeros)?,
        StnMode::TranslationScale => sim(&scale(col(0)?)?, None, &col(1)?, &col(2)?)?,
        StnMode::TranslationRotation => sim(&ones, Some(col(0)?), &col(1)?, &col(2)?)?,
        StnMode::TranslationRotationScale => sim(&scale(col(0)?)?, Some(col(1)?), &col(2)?, &col(3)?)?,
        StnMode::Affine => floor_determinant(p)?,
    };
    Ok(theta)
}

/// Rescales the linear part of each row so that `|det| >= DET_FLOOR`. The
/// rescaling factor is treated as a constant.
fn floor_determinant(theta: &Tensor) -> Result<Tensor> {
    let col = |i: usize| theta.narrow(1, i, 1);
    let det = col(0)?.mul(&col(4)?)?.sub(&col(1)?.mul(&col(3)?)?)?.detach();
    let k = det
        .abs()?
        .maximum(1e-12)?
        .recip()?
        .affine(DET_FLOOR, 0.0)?
        .maximum(1.0)?
        .sqrt()?;
    let one = k.ones_like()?;
    let factors = Tensor::cat(&[&k, &k, &one, &k, &k, &one], 1)?;
    Ok(theta.mul(&factors)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Affine2;
    use candle_core::{DType, Device};

    fn to_affine(t: &Tensor, row: usize) -> Affine2 {
        let v = t.get(row).unwrap().to_dtype(DType::F64).unwrap().to_vec1::<f64>().unwrap();
        Affine2([[v[0], v[1], v[2]], [v[3], v[4], v[5]]])
    }

    #[test]
    fn tensor_parametrization_matches_scalar() {
        let raw = [0.8, 0.3, -0.2, 0.15, 1.2, 0.05];
        for mode in StnMode::ALL {
            let n = mode.n_params();
            let p = Tensor::from_vec(raw[..n].to_vec(), (1, n), &Device::Cpu).unwrap();
            let got = to_affine(&theta_from_params(mode, &p).unwrap(), 0);
            let want = mode.theta_from_params(&raw[..n]);
            assert!(got.max_abs_diff(&want) < 1e-12, "{mode}: {got:?} vs {want:?}");
        }
    }

    #[test]
    fn fresh_head_predicts_identity() {
        let input = Tensor::randn(0f32, 1.0, (2, 16, 12, 12), &Device::Cpu).unwrap();
        for mode in StnMode::ALL {
            let mut store = ParamStore::new(3, DType::F32, &Device::Cpu);
            let stn = Stn::new(&mut store, "stn", 16, mode).unwrap();
            let theta = stn.predict_theta(&input).unwrap();
            for row in 0..2 {
                assert_eq!(to_affine(&theta, row), Affine2::IDENTITY, "{mode}");
            }
            let (out, _) = stn.forward(&input).unwrap();
            let a = out.flatten_all().unwrap().to_vec1::<f32>().unwrap();
            let b = input.flatten_all().unwrap().to_vec1::<f32>().unwrap();
            assert_eq!(a, b, "{mode}");
        }
    }

    #[test]
    fn translation_mode_keeps_identity_linear_part() {
        let mut store = ParamStore::new(1, DType::F32, &Device::Cpu);
        let stn = Stn::new(&mut store, "stn", 4, StnMode::Translation).unwrap();
        // Perturb the regressor so the prediction depends on the input.
        let w = store.named_var("stn.loc.fc2.weight").unwrap();
        w.set(&Tensor::ones(w.dims(), DType::F32, &Device::Cpu).unwrap()).unwrap();
        let input = Tensor::randn(0f32, 1.0, (3, 4, 8, 8), &Device::Cpu).unwrap();
        let theta = stn.predict_theta(&input).unwrap();
        for row in 0..3 {
            let l = to_affine(&theta, row).linear();
            assert_eq!(l, [[1.0, 0.0], [0.0, 1.0]]);
        }
    }

    #[test]
    fn affine_rows_respect_the_floor() {
        let p = Tensor::from_vec(vec![1e-3, 0.0, 0.0, 0.0, 1e-3, 0.0], (1, 6), &Device::Cpu).unwrap();
        let theta = theta_from_params(StnMode::Affine, &p).unwrap();
        assert!(to_affine(&theta, 0).det().abs() >= DET_FLOOR * (1.0 - 1e-9));
    }
}
