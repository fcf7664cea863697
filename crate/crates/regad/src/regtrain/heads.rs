use candle_core::{Module, ModuleT, Tensor};
use candle_nn::{BatchNorm, Conv2d};

use crate::featnet::ParamStore;
use crate::Result;

/// Channel widths of the encoder (`E`) and predictor (`P`) stacks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeadWidths {
    pub encoder: Vec<usize>,
    pub predictor: Vec<usize>,
}

impl Default for HeadWidths {
    fn default() -> Self {
        HeadWidths {
            encoder: vec![256, 256, 256, 256],
            predictor: vec![256, 64, 256],
        }
    }
}

impl HeadWidths {
    pub fn to_meta(&self) -> String {
        let join = |v: &[usize]| v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join("-");
        format!("{};{}", join(&self.encoder), join(&self.predictor))
    }
}

/// A stack of 1×1 convolutions with BN + ReLU between layers and a plain
/// output layer.
struct ConvStack {
    hidden: Vec<(Conv2d, BatchNorm)>,
    out: Conv2d,
}

impl ConvStack {
    fn new(store: &mut ParamStore, prefix: &str, widths: &[usize]) -> Result<Self> {
        assert!(widths.len() >= 2, "a stack needs input and output widths");
        let n = widths.len() - 1;
        let mut hidden = Vec::with_capacity(n - 1);
        for i in 0..n - 1 {
            let conv = store.conv_uniform(&format!("{prefix}.{i}.conv"), widths[i], widths[i + 1], 1, 1, 0, false)?;
            let bn = store.batch_norm(&format!("{prefix}.{i}.bn"), widths[i + 1])?;
            hidden.push((conv, bn));
        }
        let out = store.conv_uniform(&format!("{prefix}.{}.conv", n - 1), widths[n - 1], widths[n], 1, 1, 0, true)?;
        Ok(ConvStack { hidden, out })
    }

    fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mut h = x.clone();
        for (conv, bn) in &self.hidden {
            h = bn.forward_t(&conv.forward(&h)?, train)?.relu()?;
        }
        Ok(self.out.forward(&h)?)
    }
}

/// Siamese registration heads; no spatial pooling anywhere.
pub struct RegistrationHeads {
    encoder: ConvStack,
    predictor: ConvStack,
    widths: HeadWidths,
}

impl RegistrationHeads {
    pub fn new(store: &mut ParamStore, widths: &HeadWidths) -> Result<Self> {
        Ok(RegistrationHeads {
            encoder: ConvStack::new(store, "encoder", &widths.encoder)?,
            predictor: ConvStack::new(store, "predictor", &widths.predictor)?,
            widths: widths.clone(),
        })
    }

    pub fn widths(&self) -> &HeadWidths {
        &self.widths
    }

    /// `z = E(f)`.
    pub fn encode(&self, f: &Tensor, train: bool) -> Result<Tensor> {
        self.encoder.forward_t(f, train)
    }

    /// `p = P(z)`.
    pub fn predict(&self, z: &Tensor, train: bool) -> Result<Tensor> {
        self.predictor.forward_t(z, train)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    #[test]
    fn heads_preserve_spatial_shape() {
        let mut store = ParamStore::new(0, DType::F32, &Device::Cpu);
        let heads = RegistrationHeads::new(&mut store, &HeadWidths::default()).unwrap();
        let f = Tensor::randn(0f32, 1.0, (2, 256, 5, 7), &Device::Cpu).unwrap();
        let z = heads.encode(&f, true).unwrap();
        let p = heads.predict(&z, true).unwrap();
        assert_eq!(z.dims(), &[2, 256, 5, 7]);
        assert_eq!(p.dims(), &[2, 256, 5, 7]);
    }
}
