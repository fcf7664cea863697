use std::f64::consts::PI;

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};

use crate::Result;

/// Heavy-ball SGD: `v ← μ v + g`, `w ← w − lr · v`.
pub struct MomentumSgd {
    vars: Vec<Var>,
    velocity: Vec<Option<Tensor>>,
    momentum: f64,
}

impl MomentumSgd {
    pub fn new(vars: Vec<Var>, momentum: f64) -> Self {
        let velocity = vec![None; vars.len()];
        MomentumSgd {
            vars,
            velocity,
            momentum,
        }
    }

    pub fn step(&mut self, grads: &GradStore, lr: f64) -> Result<()> {
        for (var, vel) in self.vars.iter().zip(self.velocity.iter_mut()) {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            let v = match vel.take() {
                Some(prev) => prev.affine(self.momentum, 0.0)?.add(g)?,
                None => g.clone(),
            };
            if lr != 0.0 {
                var.set(&var.as_tensor().sub(&v.affine(lr, 0.0)?)?)?;
            }
            *vel = Some(v);
        }
        Ok(())
    }
}

/// Single-cycle cosine decay from `base` at step 0 towards 0 at `total`.
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    base * 0.5 * (1.0 + (PI * step as f64 / total as f64).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_lr(0.1, 0, 10), 0.1);
        assert!((cosine_lr(0.1, 5, 10) - 0.05).abs() < 1e-15);
        assert!(cosine_lr(0.1, 10, 10).abs() < 1e-15);
    }

    #[test]
    fn momentum_matches_hand_rolled_update() {
        let w = Var::new(&[1.0f64, -2.0], &Device::Cpu).unwrap();
        let mut opt = MomentumSgd::new(vec![w.clone()], 0.9);
        // loss = sum(w²) ⇒ g = 2w
        let mut expected = [1.0f64, -2.0];
        let mut vel = [0.0f64, 0.0];
        for _ in 0..3 {
            let loss = w.as_tensor().sqr().unwrap().sum_all().unwrap();
            let grads = loss.backward().unwrap();
            opt.step(&grads, 0.1).unwrap();
            for i in 0..2 {
                vel[i] = 0.9 * vel[i] + 2.0 * expected[i];
                expected[i] -= 0.1 * vel[i];
            }
        }
        let got = w.as_tensor().to_vec1::<f64>().unwrap();
        for i in 0..2 {
            assert!((got[i] - expected[i]).abs() < 1e-12);
        }
    }
}
