//! Negative cosine similarity averaged over batch and spatial positions, and
//! its symmetrized registration form.

use candle_core::Tensor;

use crate::{RegadError, Result};

/// Floor on the squared norm, i.e. a norm floor of 1e-12.
const NORM_SQ_FLOOR: f64 = 1e-24;

/// `-mean_{b,y,x} cos(p[b,:,y,x], z[b,:,y,x])`, with `z` treated as a constant.
/// Inputs are `(B, C, H, W)`.
pub fn cosine_distance(p: &Tensor, z: &Tensor) -> Result<Tensor> {
    if p.dims() != z.dims() {
        return Err(RegadError::ShapeMismatch(format!(
            "cosine distance between {:?} and {:?}",
            p.dims(),
            z.dims()
        )));
    }
    let z = z.detach();
    let dot = p.mul(&z)?.sum(1)?;
    let np = p.sqr()?.sum(1)?.maximum(NORM_SQ_FLOOR)?.sqrt()?;
    let nz = z.sqr()?.sum(1)?.maximum(NORM_SQ_FLOOR)?.sqrt()?;
    let cos = dot.div(&np.mul(&nz)?)?;
    Ok(cos.mean_all()?.neg()?)
}

/// `½ (D(p_a, z_b) + D(p_b, z_a))`.
pub fn registration_loss(p_a: &Tensor, z_b: &Tensor, p_b: &Tensor, z_a: &Tensor) -> Result<Tensor> {
    let d_ab = cosine_distance(p_a, z_b)?;
    let d_ba = cosine_distance(p_b, z_a)?;
    Ok(d_ab.add(&d_ba)?.affine(0.5, 0.0)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{Device, Var};

    fn t(v: Vec<f64>, shape: (usize, usize, usize, usize)) -> Tensor {
        Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
    }

    fn scalar(t: &Tensor) -> f64 {
        t.to_scalar::<f64>().unwrap()
    }

    #[test]
    fn identical_maps_give_minus_one() {
        let a = t((1..=24).map(f64::from).collect(), (2, 3, 2, 2));
        assert!((scalar(&cosine_distance(&a, &a).unwrap()) + 1.0).abs() < 1e-12);
        assert!((scalar(&registration_loss(&a, &a, &a, &a).unwrap()) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_vectors_give_zero() {
        let p = t(vec![1.0, 0.0], (1, 2, 1, 1));
        let z = t(vec![0.0, 3.0], (1, 2, 1, 1));
        assert_eq!(scalar(&cosine_distance(&p, &z).unwrap()), 0.0);
    }

    #[test]
    fn zero_vector_contributes_zero() {
        // position 0: p = (0, 0), z = (1, 2); position 1: p = (1, 1), z = (1, 1)
        let p = t(vec![0.0, 1.0, 0.0, 1.0], (1, 2, 1, 2));
        let z = t(vec![1.0, 1.0, 2.0, 1.0], (1, 2, 1, 2));
        let got = scalar(&cosine_distance(&p, &z).unwrap());
        assert!((got + 0.5).abs() < 1e-12, "{got}");
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = t(vec![1.0; 4], (1, 4, 1, 1));
        let b = t(vec![1.0; 4], (1, 2, 2, 1));
        assert!(cosine_distance(&a, &b).is_err());
    }

    #[test]
    fn gradient_ignores_the_z_branch() {
        let p = Var::from_tensor(&t(vec![0.3, -0.2, 0.5, 0.9], (1, 4, 1, 1))).unwrap();
        let z = Var::from_tensor(&t(vec![0.1, 0.4, -0.7, 0.2], (1, 4, 1, 1))).unwrap();
        let grads = cosine_distance(p.as_tensor(), z.as_tensor()).unwrap().backward().unwrap();
        assert!(grads.get(p.as_tensor()).is_some());
        assert!(grads.get(z.as_tensor()).is_none());
    }
}
