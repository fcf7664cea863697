//! Seeded parameter creation on top of a candle `VarMap`.
//!
//! The candle CPU backend cannot be seeded, so initial values are drawn here
//! from a ChaCha stream and inserted into the map by name.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use candle_nn::{BatchNorm, Conv2d, Conv2dConfig, Linear, VarMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::{RegadError, Result};

#[derive(Debug, Clone, Copy)]
pub enum ParamInit {
    Const(f64),
    Normal { std: f64 },
    Uniform { bound: f64 },
}

/// Names ending with these suffixes are running statistics, not parameters.
const BUFFER_SUFFIXES: [&str; 2] = ["running_mean", "running_var"];

pub fn is_buffer(name: &str) -> bool {
    BUFFER_SUFFIXES.iter().any(|s| name.ends_with(s))
}

pub struct ParamStore {
    varmap: VarMap,
    rng: ChaCha8Rng,
    device: Device,
    dtype: DType,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType, device: &Device) -> Self {
        ParamStore {
            varmap: VarMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            device: device.clone(),
            dtype,
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn varmap(&self) -> &VarMap {
        &self.varmap
    }

    pub fn var(&mut self, name: &str, shape: &[usize], init: ParamInit) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let values: Vec<f64> = match init {
            ParamInit::Const(c) => vec![c; n],
            ParamInit::Normal { std } => {
                let dist = Normal::new(0.0, std).map_err(|e| RegadError::InvalidInput(e.to_string()))?;
                (0..n).map(|_| dist.sample(&mut self.rng)).collect()
            }
            ParamInit::Uniform { bound } => (0..n)
                .map(|_| self.rng.random_range(-bound..=bound))
                .collect(),
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let mut data = self.varmap.data().lock().expect("varmap lock");
        if data.contains_key(name) {
            return Err(RegadError::Checkpoint(format!("duplicate parameter `{name}`")));
        }
        data.insert(name.to_string(), var.clone());
        Ok(var.as_tensor().clone())
    }

    /// Bias-free conv with Kaiming-normal (fan-out) weights.
    pub fn conv_kaiming(
        &mut self,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Conv2d> {
        let std = (2.0 / (c_out * k * k) as f64).sqrt();
        let w = self.var(&format!("{name}.weight"), &[c_out, c_in, k, k], ParamInit::Normal { std })?;
        Ok(Conv2d::new(
            w,
            None,
            Conv2dConfig {
                stride,
                padding,
                ..Default::default()
            },
        ))
    }

    /// Conv with the uniform `±1/sqrt(fan_in)` default, optionally biased.
    pub fn conv_uniform(
        &mut self,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Result<Conv2d> {
        let bound = 1.0 / ((c_in * k * k) as f64).sqrt();
        let w = self.var(&format!("{name}.weight"), &[c_out, c_in, k, k], ParamInit::Uniform { bound })?;
        let b = if bias {
            Some(self.var(&format!("{name}.bias"), &[c_out], ParamInit::Uniform { bound })?)
        } else {
            None
        };
        Ok(Conv2d::new(
            w,
            b,
            Conv2dConfig {
                stride,
                padding,
                ..Default::default()
            },
        ))
    }

    pub fn batch_norm(&mut self, name: &str, c: usize) -> Result<BatchNorm> {
        let rm = self.var(&format!("{name}.running_mean"), &[c], ParamInit::Const(0.0))?;
        let rv = self.var(&format!("{name}.running_var"), &[c], ParamInit::Const(1.0))?;
        let w = self.var(&format!("{name}.weight"), &[c], ParamInit::Const(1.0))?;
        let b = self.var(&format!("{name}.bias"), &[c], ParamInit::Const(0.0))?;
        Ok(BatchNorm::new_with_momentum(c, rm, rv, w, b, 1e-5, 0.1)?)
    }

    pub fn linear(&mut self, name: &str, d_in: usize, d_out: usize) -> Result<Linear> {
        let bound = 1.0 / (d_in as f64).sqrt();
        let w = self.var(&format!("{name}.weight"), &[d_out, d_in], ParamInit::Uniform { bound })?;
        let b = self.var(&format!("{name}.bias"), &[d_out], ParamInit::Uniform { bound })?;
        Ok(Linear::new(w, Some(b)))
    }

    /// Linear layer with zero weights and a fixed bias.
    pub fn linear_with_bias(&mut self, name: &str, d_in: usize, bias: &[f64]) -> Result<Linear> {
        let d_out = bias.len();
        let w = self.var(&format!("{name}.weight"), &[d_out, d_in], ParamInit::Const(0.0))?;
        let b = self.var(&format!("{name}.bias"), &[d_out], ParamInit::Const(0.0))?;
        let init = Tensor::from_vec(bias.to_vec(), d_out, &self.device)?.to_dtype(self.dtype)?;
        self.named_var(&format!("{name}.bias"))?.set(&init)?;
        Ok(Linear::new(w, Some(b)))
    }

    pub fn named_var(&self, name: &str) -> Result<Var> {
        self.varmap
            .data()
            .lock()
            .expect("varmap lock")
            .get(name)
            .cloned()
            .ok_or_else(|| RegadError::Checkpoint(format!("unknown parameter `{name}`")))
    }

    /// Trainable variables (running statistics excluded) whose names pass `keep`.
    pub fn trainable<F: Fn(&str) -> bool>(&self, keep: F) -> Vec<(String, Var)> {
        let data = self.varmap.data().lock().expect("varmap lock");
        let mut out: Vec<(String, Var)> = data
            .iter()
            .filter(|(n, _)| !is_buffer(n) && keep(n))
            .map(|(n, v)| (n.clone(), v.clone()))
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    /// Snapshot of every variable, keyed by name.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Vec<f32>>> {
        let data = self.varmap.data().lock().expect("varmap lock");
        let mut out = BTreeMap::new();
        for (n, v) in data.iter() {
            let flat = v.as_tensor().flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()?;
            out.insert(n.clone(), flat);
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.varmap.save(path)?;
        Ok(())
    }

    /// Overwrites every variable from a safetensors file; all names must be present.
    pub fn load(&mut self, path: &Path) -> Result<()> {
        if !path.is_file() {
            return Err(RegadError::Checkpoint(format!(
                "weight file {} not found",
                path.display()
            )));
        }
        self.varmap
            .load(path)
            .map_err(|e| RegadError::Checkpoint(format!("{}: {e}", path.display())))
    }

    /// Copies tensors `source_prefix + suffix` from a safetensors file into the
    /// variables named `target_prefix + suffix`. Every target must be found.
    pub fn load_prefixed(&mut self, path: &Path, target_prefix: &str, source_prefix: &str) -> Result<usize> {
        if !path.is_file() {
            return Err(RegadError::Checkpoint(format!(
                "backbone weights {} not found",
                path.display()
            )));
        }
        let tensors = candle_core::safetensors::load(path, &self.device)?;
        let data = self.varmap.data().lock().expect("varmap lock");
        let mut n = 0;
        for (name, var) in data.iter() {
            let Some(suffix) = name.strip_prefix(target_prefix) else {
                continue;
            };
            let key = format!("{source_prefix}{suffix}");
            let t = tensors.get(&key).ok_or_else(|| {
                RegadError::Checkpoint(format!("{} lacks tensor `{key}`", path.display()))
            })?;
            if t.dims() != var.dims() {
                return Err(RegadError::Checkpoint(format!(
                    "`{key}` has shape {:?}, expected {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_dtype(self.dtype)?)?;
            n += 1;
        }
        Ok(n)
    }
}
