//! Differentiable bilinear affine sampling for `(B, C, H, W)` tensors.
//!
//! Uses the same pixel-space coefficients as [`crate::geometry::PixelMap`], so
//! results agree with the scalar `warp_plane` and identity sampling is exact.

use candle_core::{DType, Tensor, D};

use crate::Result;

/// Pixel-map coefficients `(xx, xy, x0, yx, yy, y0)`, each `(B, 1)`, from a
/// `(B, 6)` row-major theta.
fn pixel_coefficients(theta: &Tensor, h: usize, w: usize) -> Result<[Tensor; 6]> {
    let col = |i: usize| theta.narrow(1, i, 1);
    let (m00, m01, m02, m10, m11, m12) = (col(0)?, col(1)?, col(2)?, col(3)?, col(4)?, col(5)?);
    let (hf, wf) = (h as f64, w as f64);

    let xy = m01.affine(wf / hf, 0.0)?;
    let x0 = m00
        .affine((1.0 - wf) / 2.0, 0.0)?
        .add(&xy.affine((1.0 - hf) / 2.0, 0.0)?)?
        .add(&m02.affine(wf / 2.0, wf / 2.0 - 0.5)?)?;
    let yx = m10.affine(hf / wf, 0.0)?;
    let y0 = yx
        .affine((1.0 - wf) / 2.0, 0.0)?
        .add(&m11.affine((1.0 - hf) / 2.0, 0.0)?)?
        .add(&m12.affine(hf / 2.0, hf / 2.0 - 0.5)?)?;
    Ok([m00, xy, x0, yx, m11, y0])
}

/// Samples `x` at `theta · (target grid)`, bilinear with zero fill.
///
/// `x` is `(B, C, H, W)`, `theta` is `(B, 6)`; gradients flow to both.
pub fn sample_affine(x: &Tensor, theta: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let dtype = x.dtype();
    let dev = x.device();
    let theta = theta.to_dtype(dtype)?;
    let [xx, xy, x0, yx, yy, y0] = pixel_coefficients(&theta, h, w)?;

    let n = h * w;
    let gx: Vec<f64> = (0..n).map(|i| (i % w) as f64).collect();
    let gy: Vec<f64> = (0..n).map(|i| (i / w) as f64).collect();
    let gx = Tensor::from_vec(gx, (1, n), dev)?.to_dtype(dtype)?;
    let gy = Tensor::from_vec(gy, (1, n), dev)?.to_dtype(dtype)?;

    // (B, HW) fractional source positions.
    let sx = gx.broadcast_mul(&xx)?.broadcast_add(&gy.broadcast_mul(&xy)?)?.broadcast_add(&x0)?;
    let sy = gx.broadcast_mul(&yx)?.broadcast_add(&gy.broadcast_mul(&yy)?)?.broadcast_add(&y0)?;

    let fx = sx.floor()?.detach();
    let fy = sy.floor()?.detach();
    let wx1 = sx.sub(&fx)?;
    let wy1 = sy.sub(&fy)?;
    let wx0 = wx1.affine(-1.0, 1.0)?;
    let wy0 = wy1.affine(-1.0, 1.0)?;

    let flat = x.reshape((b, c, n))?;
    let mut out: Option<Tensor> = None;
    for (dy, wy) in [(0.0, &wy0), (1.0, &wy1)] {
        for (dx, wx) in [(0.0, &wx0), (1.0, &wx1)] {
            let ix = fx.affine(1.0, dx)?;
            let iy = fy.affine(1.0, dy)?;
            let valid = ix
                .ge(0.0)?
                .mul(&ix.le((w - 1) as f64)?)?
                .mul(&iy.ge(0.0)?.mul(&iy.le((h - 1) as f64)?)?)?
                .to_dtype(dtype)?;
            let idx = iy
                .clamp(0.0, (h - 1) as f64)?
                .affine(w as f64, 0.0)?
                .add(&ix.clamp(0.0, (w - 1) as f64)?)?
                .to_dtype(DType::U32)?
                .unsqueeze(1)?
                .broadcast_as((b, c, n))?
                .contiguous()?;
            let weight = wx.mul(wy)?.mul(&valid)?.unsqueeze(1)?;
            let term = flat.gather(&idx, D::Minus1)?.broadcast_mul(&weight)?;
            out = Some(match out {
                None => term,
                Some(acc) => acc.add(&term)?,
            });
        }
    }
    Ok(out.expect("four corners").reshape((b, c, h, w))?)
}
