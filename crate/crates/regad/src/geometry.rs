//! Resampling primitives shared by preprocessing, augmentation, feature
//! aggregation and score-map realignment.
//!
//! Affine matrices follow the sampling convention of spatial transformers:
//! a 2×3 matrix `[L | t]` maps a *target* location, in normalized
//! coordinates where the outer pixel edges sit at ±1, to the *source*
//! location that is sampled. Sampling is bilinear with zero fill outside the
//! source.

use ndarray::{Array2, ArrayView2};

/// A 2×3 affine matrix in normalized `[-1, 1]` coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine2(pub [[f64; 3]; 2]);

impl Affine2 {
    pub const IDENTITY: Affine2 = Affine2([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);

    pub fn translation(tx: f64, ty: f64) -> Self {
        Affine2([[1.0, 0.0, tx], [0.0, 1.0, ty]])
    }

    pub fn linear(&self) -> [[f64; 2]; 2] {
        let m = &self.0;
        [[m[0][0], m[0][1]], [m[1][0], m[1][1]]]
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    /// `self ∘ other`: first apply `other`, then `self` (as point maps).
    pub fn compose(&self, other: &Affine2) -> Affine2 {
        let a = &self.0;
        let b = &other.0;
        let mut out = [[0.0; 3]; 2];
        for r in 0..2 {
            for c in 0..3 {
                let mut v = a[r][0] * b[0][c] + a[r][1] * b[1][c];
                if c == 2 {
                    v += a[r][2];
                }
                out[r][c] = v;
            }
        }
        Affine2(out)
    }

    /// `[L⁻¹ | −L⁻¹ t]`, or `None` when `|det L|` is below `floor`.
    pub fn inverse(&self, floor: f64) -> Option<Affine2> {
        let det = self.det();
        if !det.is_finite() || det.abs() < floor {
            return None;
        }
        let m = &self.0;
        let (a, b, c, d) = (m[0][0], m[0][1], m[1][0], m[1][1]);
        let inv = [[d / det, -b / det], [-c / det, a / det]];
        let (tx, ty) = (m[0][2], m[1][2]);
        Some(Affine2([
            [inv[0][0], inv[0][1], -(inv[0][0] * tx + inv[0][1] * ty)],
            [inv[1][0], inv[1][1], -(inv[1][0] * tx + inv[1][1] * ty)],
        ]))
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.0;
        (
            m[0][0] * x + m[0][1] * y + m[0][2],
            m[1][0] * x + m[1][1] * y + m[1][2],
        )
    }

    pub fn max_abs_diff(&self, other: &Affine2) -> f64 {
        let mut d: f64 = 0.0;
        for r in 0..2 {
            for c in 0..3 {
                d = d.max((self.0[r][c] - other.0[r][c]).abs());
            }
        }
        d
    }

    /// Pixel-space form of the map for a `height × width` grid.
    pub fn pixel_map(&self, height: usize, width: usize) -> PixelMap {
        PixelMap::new(self, height, width)
    }
}

impl Default for Affine2 {
    fn default() -> Self {
        Affine2::IDENTITY
    }
}

/// Output pixel index `(x, y)` → fractional source pixel index, with pixel
/// centres at integer positions (`align_corners = false` semantics).
///
/// The constant terms are arranged so that identity and integer-cell shifts
/// map integer positions to exact integers.
#[derive(Debug, Clone, Copy)]
pub struct PixelMap {
    pub xx: f64,
    pub xy: f64,
    pub x0: f64,
    pub yx: f64,
    pub yy: f64,
    pub y0: f64,
}

impl PixelMap {
    fn new(theta: &Affine2, height: usize, width: usize) -> Self {
        let m = &theta.0;
        let w = width as f64;
        let h = height as f64;
        let xx = m[0][0];
        let xy = m[0][1] * (w / h);
        let x0 = m[0][0] * (1.0 - w) / 2.0 + xy * (1.0 - h) / 2.0 + (w / 2.0) * (m[0][2] + 1.0) - 0.5;
        let yx = m[1][0] * (h / w);
        let yy = m[1][1];
        let y0 = yx * (1.0 - w) / 2.0 + m[1][1] * (1.0 - h) / 2.0 + (h / 2.0) * (m[1][2] + 1.0) - 0.5;
        PixelMap {
            xx,
            xy,
            x0,
            yx,
            yy,
            y0,
        }
    }

    #[inline]
    pub fn source(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.xx * x + self.xy * y + self.x0,
            self.yx * x + self.yy * y + self.y0,
        )
    }
}

/// Bilinear read of `plane` at fractional `(sx, sy)` with zero outside.
#[inline]
pub fn sample_zero_fill(plane: &ArrayView2<f64>, sx: f64, sy: f64) -> f64 {
    let (h, w) = plane.dim();
    let fx = sx.floor();
    let fy = sy.floor();
    let wx = sx - fx;
    let wy = sy - fy;
    let ix = fx as isize;
    let iy = fy as isize;
    let at = |yy: isize, xx: isize| -> f64 {
        if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
            0.0
        } else {
            plane[[yy as usize, xx as usize]]
        }
    };
    at(iy, ix) * (1.0 - wx) * (1.0 - wy)
        + at(iy, ix + 1) * wx * (1.0 - wy)
        + at(iy + 1, ix) * (1.0 - wx) * wy
        + at(iy + 1, ix + 1) * wx * wy
}

/// Resamples `plane` through `theta`; output shape equals input shape.
pub fn warp_plane(plane: ArrayView2<f64>, theta: &Affine2) -> Array2<f64> {
    let (h, w) = plane.dim();
    let map = theta.pixel_map(h, w);
    Array2::from_shape_fn((h, w), |(y, x)| {
        let (sx, sy) = map.source(x as f64, y as f64);
        sample_zero_fill(&plane, sx, sy)
    })
}

/// `f32` variant of [`warp_plane`], used for image pixels.
pub fn warp_plane_f32(plane: ArrayView2<f32>, theta: &Affine2) -> Array2<f32> {
    let wide = plane.mapv(f64::from);
    warp_plane(wide.view(), theta).mapv(|v| v as f32)
}

/// Bilinear resize with half-pixel centres and edge clamping.
pub fn resize_plane(plane: ArrayView2<f64>, out_h: usize, out_w: usize) -> Array2<f64> {
    let (h, w) = plane.dim();
    if h == out_h && w == out_w {
        return plane.to_owned();
    }
    let ys: Vec<(usize, usize, f64)> = (0..out_h).map(|o| axis_weights(o, h, out_h)).collect();
    let xs: Vec<(usize, usize, f64)> = (0..out_w).map(|o| axis_weights(o, w, out_w)).collect();
    Array2::from_shape_fn((out_h, out_w), |(oy, ox)| {
        let (y0, y1, wy) = ys[oy];
        let (x0, x1, wx) = xs[ox];
        let top = plane[[y0, x0]] * (1.0 - wx) + plane[[y0, x1]] * wx;
        let bottom = plane[[y1, x0]] * (1.0 - wx) + plane[[y1, x1]] * wx;
        top * (1.0 - wy) + bottom * wy
    })
}

pub fn resize_plane_f32(plane: ArrayView2<f32>, out_h: usize, out_w: usize) -> Array2<f32> {
    let wide = plane.mapv(f64::from);
    resize_plane(wide.view(), out_h, out_w).mapv(|v| v as f32)
}

/// Source indices and weight of the upper neighbour for output index `o`.
fn axis_weights(o: usize, n_in: usize, n_out: usize) -> (usize, usize, f64) {
    let scale = n_in as f64 / n_out as f64;
    let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(n_in - 1);
    let i1 = (i0 + 1).min(n_in - 1);
    let w = if i1 == i0 { 0.0 } else { src - i0 as f64 };
    (i0, i1, w)
}

/// Nearest-neighbour resize using pixel centres.
pub fn resize_nearest<T: Copy>(plane: ArrayView2<T>, out_h: usize, out_w: usize) -> Array2<T> {
    let (h, w) = plane.dim();
    Array2::from_shape_fn((out_h, out_w), |(oy, ox)| {
        let sy = (((oy as f64 + 0.5) * h as f64 / out_h as f64).floor() as usize).min(h - 1);
        let sx = (((ox as f64 + 0.5) * w as f64 / out_w as f64).floor() as usize).min(w - 1);
        plane[[sy, sx]]
    })
}

/// Separable Gaussian blur with reflected borders; `sigma <= 0` is a no-op.
pub fn gaussian_blur(plane: ArrayView2<f64>, sigma: f64) -> Array2<f64> {
    if sigma <= 0.0 {
        return plane.to_owned();
    }
    let radius = (4.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let (h, w) = plane.dim();
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        if n == 1 {
            return 0;
        }
        let period = 2 * n;
        let mut m = i.rem_euclid(period);
        if m >= n {
            m = period - 1 - m;
        }
        m as usize
    };
    let horizontal: Array2<f64> = Array2::from_shape_fn((h, w), |(y, x)| {
        kernel
            .iter()
            .enumerate()
            .map(|(k, wk)| wk * plane[[y, reflect(x as isize + k as isize - radius, w)]])
            .sum::<f64>()
    });
    Array2::from_shape_fn((h, w), |(y, x)| {
        kernel
            .iter()
            .enumerate()
            .map(|(k, wk)| wk * horizontal[[reflect(y as isize + k as isize - radius, h), x]])
            .sum()
    })
}
